use std::fs;
use std::path::{Path, PathBuf};

use dln::battery::{run_battery, BatteryConfig, Fault};
use dln::flows::{
    langevin_flow, learning_flow, ness_flow, ou_noise, regularized_flow, regularizing_flow, FlowTrace, IntegratorSpec,
    LossSpec, StochasticSpec,
};
use dln::io::{
    balancing_to_json, chain_from_json, chain_to_json, matrix_from_json, minimization_to_json, state_space_from_json,
    state_space_to_json, write_trace_csv,
};
use dln::linalg::{self, Mat};
use dln::realization::{balance_realization, BalanceOptions, BalanceStatus, StateSpace};
use dln::variational::{minimize_ridge_on_fiber, minimize_schatten_on_fiber, MinimizeOptions};
use dln::{center, Chain, Field, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, FlowConfig, FlowKind, MinimizeConfig, MinimizeKind, RealizeConfig, Source, Task, VerifyConfig};
use crate::error::{CliError, Result};

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    match (&cfg.task, cfg.common.field) {
        (Task::Flow(f), Field::Real) => flow::<f64>(cfg, f),
        (Task::Flow(f), Field::Complex) => flow::<dln::Complex64>(cfg, f),
        (Task::Minimize(m), Field::Real) => minimize::<f64>(cfg, m),
        (Task::Minimize(m), Field::Complex) => minimize::<dln::Complex64>(cfg, m),
        (Task::Realize(r), Field::Real) => realize::<f64>(cfg, r),
        (Task::Realize(r), Field::Complex) => realize::<dln::Complex64>(cfg, r),
        (Task::Verify(v), _) => verify(cfg, v),
    }
}

fn read_json(field: &str, path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(field, format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v).expect("json value serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    let dir = &cfg.common.out_dir;
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.clone(),
        source,
    })?;
    Ok(dir.join(name))
}

fn config_json(cfg: &ExperimentConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn tag(field: &str, e: dln::Error) -> CliError {
    CliError::invalid(field, e.to_string())
}

fn load_matrix<T: Scalar>(field: &str, src: &Source, d: usize, rng: &mut ChaCha8Rng) -> Result<Mat<T>> {
    match src {
        Source::Random | Source::Center => Ok(linalg::random_matrix(d, rng)),
        Source::Entries(v) => {
            if v.len() != d * d {
                return Err(CliError::invalid(field, format!("expected {} entries (d^2), got {}", d * d, v.len())));
            }
            Ok(Mat::from_row_iterator(d, d, v.iter().map(|&x| T::from_parts(x, 0.0))))
        }
        Source::File(p) => matrix_from_json(&read_json(field, p)?, Some((d, d))).map_err(|e| tag(field, e)),
    }
}

fn load_chain<T: Scalar>(fc: &FlowConfig, n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Chain<T>> {
    match &fc.init {
        Source::Random => Ok(Chain::random(n, d, rng)?),
        Source::Center => {
            let x: Mat<T> = load_matrix("x", &fc.x, d, rng)?;
            center(&x, n).map_err(|e| tag("x", e))
        }
        Source::Entries(v) => {
            if v.len() != n * d * d {
                return Err(CliError::invalid(
                    "init",
                    format!("expected {} entries (N d^2, W_N first), got {}", n * d * d, v.len()),
                ));
            }
            let layers = v
                .chunks(d * d)
                .map(|c| Mat::from_row_iterator(d, d, c.iter().map(|&x| T::from_parts(x, 0.0))))
                .collect();
            Chain::new(layers).map_err(|e| tag("init", e))
        }
        Source::File(p) => {
            let w: Chain<T> = chain_from_json(&read_json("init", p)?).map_err(|e| tag("init", e))?;
            if (w.depth(), w.width()) != (n, d) {
                return Err(CliError::invalid(
                    "init",
                    format!("chain has N = {}, d = {}; expected N = {n}, d = {d}", w.depth(), w.width()),
                ));
            }
            Ok(w)
        }
    }
}

fn trace_summary(trace: &FlowTrace) -> Value {
    let first = trace.samples.first().map_or(0.0, |s| s.g_fro);
    let drift: Vec<f64> = trace.samples.iter().map(|s| s.moment_drift.unwrap_or(0.0)).collect();
    let last = trace.last();
    let mut v = json!({
        "samples": trace.samples.len(),
        "final": {
            "t": last.t,
            "G_fro": last.g_fro,
            "W_normsq": last.w_normsq,
            "loss": last.loss,
            "fiber_drift": last.fiber_drift,
            "balance_residual": last.balance_residual,
        },
        "decay_fit": trace.fit_g_decay(),
        "max_fiber_drift": trace.max_fiber_drift(),
        "max_G_norm_change": trace.samples.iter().map(|s| (s.g_fro - first).abs()).fold(0.0, f64::max),
        "max_moment_drift": drift.iter().copied().fold(0.0, f64::max),
        "moment_drift": drift,
    });
    if trace.samples.iter().any(|s| s.ness_speed_sq.is_some()) {
        v["ness_speed_sq"] = json!(trace.samples.iter().map(|s| s.ness_speed_sq).collect::<Vec<_>>());
    }
    v
}

fn flow<T: Scalar>(cfg: &ExperimentConfig, fc: &FlowConfig) -> Result<()> {
    let (n, d, seed) = (cfg.common.n()?, cfg.common.d()?, cfg.common.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = load_chain::<T>(fc, n, d, &mut rng)?;
    let target = match &fc.target {
        Some(src) => Some(load_matrix::<T>("target", src, d, &mut rng)?),
        None => None,
    };
    if matches!(fc.kind, FlowKind::Reg | FlowKind::Ness) {
        w0.check_full_rank().map_err(|e| tag("init", e))?;
    }
    let loss = match target {
        Some(y) => LossSpec::quadratic(y)?,
        None => LossSpec::zero(),
    };
    let spec = IntegratorSpec {
        scheme: fc.scheme,
        dt: fc.dt,
        t_end: fc.t_end,
        sample_stride: fc.stride,
    };

    let mut extra = json!({});
    let (trace, final_chain) = match fc.kind {
        FlowKind::Reg => {
            let r = regularizing_flow(&w0, &spec)?;
            (r.trace, r.final_chain)
        }
        FlowKind::Ness => {
            let r = ness_flow(&w0, &spec)?;
            (r.trace, r.final_chain)
        }
        FlowKind::Learn => {
            let r = learning_flow(&w0, &loss, &spec)?;
            (r.trace, r.final_chain)
        }
        FlowKind::Combined => {
            let r = regularized_flow(&w0, &loss, fc.kappa.unwrap_or(0.0), &spec)?;
            (r.trace, r.final_chain)
        }
        FlowKind::Langevin | FlowKind::Ou => {
            let (kappa, beta) = (fc.kappa.unwrap_or(1.0), fc.beta.unwrap_or(1.0));
            let sspec = StochasticSpec {
                burn_in: fc.burn_in.unwrap_or(0.0),
                sample_every: fc.sample_every.unwrap_or(1),
                trace_every: fc.stride,
                ..StochasticSpec::new(fc.dt, fc.t_end)
            };
            let r = if fc.kind == FlowKind::Ou {
                ou_noise(&w0, kappa, beta, &sspec, seed)?
            } else {
                langevin_flow(&w0, &loss, kappa, beta, &sspec, seed)?
            };
            extra = json!({
                "stats": r.stats,
                "stationary_second_moment": 1.0 / (beta * kappa),
            });
            (r.trace, r.final_chain)
        }
    };

    let name = fc.kind.name();
    let mut csv = Vec::new();
    write_trace_csv(&trace, &mut csv)?;
    write_file(&out_path(cfg, &format!("flow-{name}.csv"))?, &csv)?;

    let mut doc = json!({
        "config": config_json(cfg),
        "seed": seed,
        "initial_chain": chain_to_json(&w0),
        "final_chain": chain_to_json(&final_chain),
    });
    merge(&mut doc, trace_summary(&trace));
    merge(&mut doc, extra);
    write_json(&out_path(cfg, &format!("flow-{name}.json"))?, &doc)?;

    let last = trace.last();
    print!(
        "flow {name}: t = {}, ||G|| = {:.6e}, ||W||^2 = {:.6e}, max fiber drift = {:.3e}",
        last.t,
        last.g_fro,
        last.w_normsq,
        trace.max_fiber_drift()
    );
    if let Some(fit) = trace.fit_g_decay() {
        print!(", log||G|| slope = {:.6}", fit.slope);
    }
    println!();
    Ok(())
}

fn merge(doc: &mut Value, extra: Value) {
    if let (Value::Object(a), Value::Object(b)) = (doc, extra) {
        a.extend(b);
    }
}

fn minimize<T: Scalar>(cfg: &ExperimentConfig, mc: &MinimizeConfig) -> Result<()> {
    let (n, d, seed) = (cfg.common.n()?, cfg.common.d()?, cfg.common.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Mat<T> = load_matrix("x", &mc.x, d, &mut rng)?;
    linalg::check_full_rank(&x, linalg::FULL_RANK_RTOL).map_err(|e| tag("x", e))?;
    let opts = MinimizeOptions {
        init_scale: mc.init_scale,
        ..MinimizeOptions::default().with_restarts(mc.restarts, seed)
    };
    let res = match (mc.kind, mc.p) {
        (MinimizeKind::Schatten, Some(p)) => minimize_schatten_on_fiber(&x, n, p, &opts)?,
        _ => minimize_ridge_on_fiber(&x, n, &opts)?,
    };
    let name = match mc.kind {
        MinimizeKind::Ridge => "ridge",
        MinimizeKind::Schatten => "schatten",
    };
    let mut doc = json!({ "config": config_json(cfg), "X": dln::io::matrix_to_json(&x) });
    merge(&mut doc, minimization_to_json(&res));
    write_json(&out_path(cfg, &format!("minimize-{name}.json"))?, &doc)?;
    let r = &res.report;
    println!(
        "minimize {name}: value = {:.12e}, analytic = {:.12e}, gap = {:.3e}, balance residual = {:.3e}, restart spread = {:.3e}",
        r.objective, r.analytic_value, r.relative_gap, r.balance_residual, r.restart_spread
    );
    if !res.converged() {
        return Err(CliError::Numerical(format!(
            "minimizer did not converge ({} iterations, best restart {})",
            r.iterations, r.restart
        )));
    }
    Ok(())
}

fn realize<T: Scalar>(cfg: &ExperimentConfig, rc: &RealizeConfig) -> Result<()> {
    let seed = cfg.common.seed;
    let sys: StateSpace<T> = match &rc.system {
        Some(p) => state_space_from_json(&read_json("system", p)?).map_err(|e| tag("system", e))?,
        None => {
            let n = rc.states.ok_or_else(|| CliError::missing("states"))?;
            StateSpace::random(n, rc.inputs, rc.outputs, &mut ChaCha8Rng::seed_from_u64(seed))?
        }
    };
    let opts = BalanceOptions {
        restarts: rc.restarts,
        seed,
        init_scale: rc.init_scale,
        ..BalanceOptions::default()
    };
    let res = balance_realization(&sys, &opts)?;
    let mut doc = json!({ "config": config_json(cfg), "system": state_space_to_json(&sys) });
    merge(&mut doc, balancing_to_json(&res));
    write_json(&out_path(cfg, "realize.json")?, &doc)?;
    println!(
        "realize: status = {:?}, cost {:.6e} -> {:.6e}, gradient norm = {:.3e}, transfer drift = {:.3e}",
        res.status, res.initial_cost, res.cost, res.gradient_norm, res.tf_drift
    );
    match res.status {
        BalanceStatus::Converged => Ok(()),
        BalanceStatus::NonMinimal => {
            println!("note: the system is not minimal; a balanced realization need not exist");
            Ok(())
        }
        BalanceStatus::NotConverged => Err(CliError::Numerical(format!(
            "balancing did not converge (gradient norm {:.3e})",
            res.gradient_norm
        ))),
    }
}

fn verify(cfg: &ExperimentConfig, vc: &VerifyConfig) -> Result<()> {
    let bc = BatteryConfig {
        field: cfg.common.field,
        d: cfg.common.d()?,
        n: cfg.common.n()?,
        seed: cfg.common.seed,
        samples: vc.samples,
        trials: vc.trials,
        fault: vc.fault.map(|_| Fault::CorruptHOperator),
    };
    let report = run_battery(&bc)?;
    write_json(
        &out_path(cfg, "verify.json")?,
        &serde_json::to_value(&report).expect("report serializes"),
    )?;
    for c in &report.checks {
        println!(
            "{:4} {:<24} {:.3e} (tol {:.1e})  {}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance,
            c.detail
        );
    }
    match report.first_failure {
        None => Ok(()),
        Some(name) => Err(CliError::ChecksFailed(format!("check `{name}` failed"))),
    }
}
