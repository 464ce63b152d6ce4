use dln::flows::{ness_flow, regularized_flow, IntegratorSpec, LossSpec};
use dln::io::{
    chain_from_json, chain_to_json, format_float, read_chain, read_trace_csv, state_space_from_json, state_space_to_json,
    trace_header, write_chain, write_trace_csv, AnyChain,
};
use dln::linalg::{self, Mat};
use dln::realization::StateSpace;
use dln::{Chain, Complex64, Field};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn chain_json_round_trips_bit_exactly() {
    let mut r = rng(1);
    let w = Chain::<Complex64>::random(4, 3, &mut r).unwrap();
    let mut buf = Vec::new();
    write_chain(&w, &mut buf).unwrap();
    let back: Chain<Complex64> = read_chain(buf.as_slice()).unwrap();
    assert_eq!(back, w);

    let v = Chain::<f64>::random(3, 2, &mut r).unwrap().scaled(1.0 / 3.0);
    let json = chain_to_json(&v);
    assert_eq!(json["N"], 3);
    assert_eq!(json["d"], 2);
    assert_eq!(json["field"], "real");
    assert_eq!(chain_from_json::<f64>(&json).unwrap(), v);
    match AnyChain::from_json(&json).unwrap() {
        AnyChain::Real(c) => assert_eq!(c, v),
        AnyChain::Complex(_) => panic!("field tag ignored"),
    }
    assert_eq!(AnyChain::from_json(&chain_to_json(&w)).unwrap().field(), Field::Complex);
}

#[test]
fn malformed_chain_json_is_rejected() {
    let bad = serde_json::json!({"N": 2, "d": 1, "field": "real", "matrices": [[[1.0]]]});
    assert!(chain_from_json::<f64>(&bad).is_err());
    let bad = serde_json::json!({"N": 2, "d": 1, "field": "quaternion", "matrices": [[[1.0]], [[1.0]]]});
    assert!(AnyChain::from_json(&bad).is_err());
}

#[test]
fn state_space_round_trips() {
    let sys = StateSpace::<Complex64>::random(3, 2, 1, &mut rng(2)).unwrap();
    let json = state_space_to_json(&sys);
    assert_eq!((json["n"].as_u64(), json["m"].as_u64(), json["p"].as_u64()), (Some(3), Some(2), Some(1)));
    assert_eq!(state_space_from_json::<Complex64>(&json).unwrap(), sys);
}

#[test]
fn trace_csv_layout_and_round_trip() {
    assert_eq!(
        trace_header(4).join(","),
        "t,G_fro,G_1_fro,G_2_fro,G_3_fro,W_normsq,loss,fiber_drift,balance_residual"
    );
    let w = Chain::<f64>::random(3, 2, &mut rng(3)).unwrap();
    let y: Mat<f64> = linalg::random_matrix(2, &mut rng(4));
    let run = regularized_flow(&w, &LossSpec::quadratic(y).unwrap(), 0.5, &IntegratorSpec::rk4(1e-2, 0.3)).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&run.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    let second = text.lines().nth(1).unwrap();
    assert!(second.starts_with(&format!("{},", format_float(0.0))));
    let back = read_trace_csv(buf.as_slice()).unwrap();
    let mut expect = run.trace.samples.clone();
    for e in &mut expect {
        e.moment_drift = None;
    }
    assert_eq!(back.samples, expect);

    // traces without a loss leave the column empty
    let run = ness_flow(&w, &IntegratorSpec::rk4(1e-3, 0.01)).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&run.trace, &mut buf).unwrap();
    let row: Vec<String> = String::from_utf8(buf).unwrap().lines().nth(1).unwrap().split(',').map(String::from).collect();
    assert_eq!(row[5], "");
}

#[test]
fn floats_keep_seventeen_significant_digits() {
    for x in [0.1, 1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -2.5e-17] {
        let s = format_float(x);
        assert_eq!(s.parse::<f64>().unwrap(), x);
        let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
        assert_eq!(mantissa.len(), 17, "{s}");
    }
}
