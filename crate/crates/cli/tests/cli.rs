use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn dln(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dln"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env_remove("DLN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn scalar_regularizing_flow_decays_at_rate_four() {
    let dir = TempDir::new().unwrap();
    let o = dln(dir.path(), &["flow", "reg", "--d", "1", "--N", "2", "--init", "2,1", "--t-end", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&dir.path().join("flow-reg.json"));
    let slope = doc["decay_fit"]["slope"].as_f64().unwrap();
    assert!((slope + 4.0).abs() <= 0.01, "{slope}");
    let csv = std::fs::read_to_string(dir.path().join("flow-reg.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "t,G_fro,G_1_fro,W_normsq,loss,fiber_drift,balance_residual"
    );
    assert_eq!(csv.lines().count(), 1002);
}

#[test]
fn missing_width_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let o = dln(dir.path(), &["flow", "reg", "--N", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`d`"), "{}", stderr(&o));
    let o = dln(dir.path(), &["minimize", "schatten", "--d", "2", "--N", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`p`"));
}

#[test]
fn learning_flow_conserves_moments() {
    let dir = TempDir::new().unwrap();
    let o = dln(
        dir.path(),
        &["flow", "learn", "--d", "3", "--N", "4", "--init", "center", "--seed", "5", "--t-end", "1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&dir.path().join("flow-learn.json"));
    assert!(doc["max_moment_drift"].as_f64().unwrap() <= 1e-7);
    let csv = std::fs::read_to_string(dir.path().join("flow-learn.csv")).unwrap();
    // the loss column is filled for loss-driven flows
    assert!(!csv.lines().nth(1).unwrap().contains(",,"));
}

#[test]
fn ridge_minimum_of_a_scalar() {
    let dir = TempDir::new().unwrap();
    let o = dln(dir.path(), &["minimize", "ridge", "--d", "1", "--N", "2", "--x", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&dir.path().join("minimize-ridge.json"));
    assert!((doc["objective"].as_f64().unwrap() - 8.0).abs() <= 1e-9);
    assert!(doc["relative_gap"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn schatten_two_on_the_identity() {
    let dir = TempDir::new().unwrap();
    let o = dln(dir.path(), &["minimize", "schatten", "--d", "2", "--N", "3", "--x", "1,0,0,1", "--p", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&dir.path().join("minimize-schatten.json"));
    assert!((doc["objective"].as_f64().unwrap() - 3.0 * 2f64.sqrt()).abs() <= 1e-8);
}

#[test]
fn restarts_agree() {
    let dir = TempDir::new().unwrap();
    let o = dln(dir.path(), &["minimize", "ridge", "--d", "3", "--N", "4", "--restarts", "8", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&dir.path().join("minimize-ridge.json"));
    assert!(doc["restart_spread"].as_f64().unwrap() <= 1e-7);
    assert_eq!(doc["per_restart"].as_array().unwrap().len(), 8);
}

#[test]
fn rank_deficient_target_is_rejected() {
    let dir = TempDir::new().unwrap();
    let x = dir.path().join("x.json");
    std::fs::write(&x, "[[1.0, 2.0], [2.0, 4.0]]").unwrap();
    let o = dln(dir.path(), &["minimize", "ridge", "--d", "2", "--N", "3", "--x", x.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rank deficient"));
    let o = dln(dir.path(), &["flow", "reg", "--d", "2", "--N", "2", "--init", "1,2,2,4,1,0,0,1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`init`"));
}

#[test]
fn verify_passes_and_catches_a_fault() {
    let dir = TempDir::new().unwrap();
    let o = dln(dir.path(), &["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("verify.json"))["passed"], Value::Bool(true));
    let o = dln(dir.path(), &["verify", "--fault", "corrupt-h-operator"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("duality"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "d = 1\nN = 2\n[flow]\ninit = \"2,1\"\n[integrator]\ndt = 0.01\nt_end = 0.5\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let o = dln(dir.path(), &["flow", "reg", "--config", cfg, "--t-end", "0.2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&dir.path().join("flow-reg.json"));
    assert_eq!(doc["config"]["dt"].as_f64(), Some(0.01));
    assert_eq!(doc["config"]["t_end"].as_f64(), Some(0.2));
    assert_eq!(doc["samples"].as_u64(), Some(21));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "depth = 3\n").unwrap();
    let o = dln(dir.path(), &["flow", "reg", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_directory_from_environment() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dln"))
        .args(["minimize", "ridge", "--d", "1", "--N", "2", "--x", "9"])
        .env("DLN_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("minimize-ridge.json").exists());
}

#[test]
fn outputs_are_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["flow", "langevin", "--d", "2", "--N", "3", "--seed", "9", "--dt", "0.01", "--t-end", "2"];
    for dir in [&a, &b] {
        assert!(dln(dir.path(), &args).status.success());
    }
    for name in ["flow-langevin.csv", "flow-langevin.json"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn realize_random_system() {
    let dir = TempDir::new().unwrap();
    let o = dln(dir.path(), &["realize", "--states", "3", "--inputs", "2", "--outputs", "1", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = json(&dir.path().join("realize.json"));
    assert_eq!(doc["status"], "converged");
    assert!(doc["cost"].as_f64().unwrap() <= doc["initial_cost"].as_f64().unwrap());
    assert!(doc["tf_drift"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn chain_file_roundtrips_as_init() {
    let dir = TempDir::new().unwrap();
    let o = dln(dir.path(), &["flow", "reg", "--d", "2", "--N", "3", "--t-end", "0.1", "--field", "complex"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fin = json(&dir.path().join("flow-reg.json"))["final_chain"].clone();
    let init = dir.path().join("init.json");
    std::fs::write(&init, fin.to_string()).unwrap();
    let o = dln(
        dir.path(),
        &["flow", "ness", "--d", "2", "--N", "3", "--field", "complex", "--t-end", "0.1", "--init", init.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("flow-ness.json"))["initial_chain"], fin);
    let o = dln(dir.path(), &["flow", "ness", "--d", "2", "--N", "3", "--init", init.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
