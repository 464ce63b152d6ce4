//! The invariant battery run by `dln verify`.
//!
//! Every check draws its random instance from the configured seed, so a
//! report is reproducible. [`Fault`] swaps in a deliberately wrong
//! H-operator to confirm the battery notices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{balancedness_residual, center, moments, ridge_norm_sq, Chain, Moments};
use crate::error::{Error, Result};
use crate::fiber::{
    end_to_end_derivative, fiber_metric, h_operator, ridge_differential, ridge_gradient_solve, tangent_from_coords,
    TangentCoords,
};
use crate::flows::{learning_flow, ness_flow, regularizing_flow, IntegratorSpec, LossSpec};
use crate::linalg::{self, fro, Mat, SpdMethod};
use crate::realization::{probe_points, similarity_action, transfer_drift, StateSpace};
use crate::scalar::{Field, Scalar};
use crate::Complex64;
use crate::variational::verify_kempf_ness;

/// Deliberate defects for exercising the battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Use `H_k(c) + W_k c_k`, which is not self-adjoint.
    CorruptHOperator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub field: Field,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    /// Random `(w, a)` pairs per pointwise check.
    pub samples: usize,
    /// Restarts for the Kempf-Ness check.
    pub trials: usize,
    pub fault: Option<Fault>,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            field: Field::Real,
            d: 2,
            n: 3,
            seed: 0,
            samples: 20,
            trials: 8,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// Worst observed error, in the units described by `detail`.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub config: BatteryConfig,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
    /// Name of the first failing check.
    pub first_failure: Option<String>,
}

type HOp<T> = fn(&Chain<T>, &TangentCoords<T>) -> Result<Vec<Mat<T>>>;

fn corrupt_h<T: Scalar>(w: &Chain<T>, c: &TangentCoords<T>) -> Result<Vec<Mat<T>>> {
    let mut h = h_operator(w, c)?;
    let n = w.depth();
    for k in 1..n {
        h[n - 1 - k] += w.layer(k) * c.get(k);
    }
    Ok(h)
}

fn pair<T: Scalar>(x: &[Mat<T>], y: &[Mat<T>]) -> f64 {
    x.iter().zip(y).map(|(a, b)| linalg::inner(a, b)).sum()
}

fn check(name: &str, value: f64, tolerance: f64, detail: &str) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        value,
        tolerance,
        passed: value <= tolerance,
        detail: detail.to_string(),
    }
}

fn failed(name: &str, e: &Error) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        value: f64::INFINITY,
        tolerance: 0.0,
        passed: false,
        detail: format!("error: {e}"),
    }
}

/// Run every check of the battery.
pub fn run_battery(cfg: &BatteryConfig) -> Result<BatteryReport> {
    if cfg.d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    if cfg.n < 2 {
        return Err(Error::invalid("N", "must be at least 2"));
    }
    if cfg.samples == 0 || cfg.trials == 0 {
        return Err(Error::invalid("samples", "samples and trials must be at least 1"));
    }
    let checks = match cfg.field {
        Field::Real => checks::<f64>(cfg),
        Field::Complex => checks::<Complex64>(cfg),
    };
    let first_failure = checks.iter().find(|c| !c.passed).map(|c| c.name.clone());
    Ok(BatteryReport {
        config: *cfg,
        passed: first_failure.is_none(),
        first_failure,
        checks,
    })
}

fn checks<T: Scalar>(cfg: &BatteryConfig) -> Vec<CheckResult> {
    let h: HOp<T> = match cfg.fault {
        None => h_operator::<T>,
        Some(Fault::CorruptHOperator) => corrupt_h::<T>,
    };
    let (d, n) = (cfg.d, cfg.n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let instances: Vec<(Chain<T>, TangentCoords<T>, TangentCoords<T>)> = (0..cfg.samples)
        .map(|_| {
            let w = Chain::random(n, d, &mut rng).expect("valid shape");
            let a = TangentCoords::random(n, d, &mut rng);
            let b = TangentCoords::random(n, d, &mut rng);
            (w, a, b)
        })
        .collect();

    let mut out = Vec::new();
    let mut run = |name: &str, tol: f64, detail: &str, f: &mut dyn FnMut() -> Result<f64>| {
        out.push(match f() {
            Ok(v) => check(name, v, tol, detail),
            Err(e) => failed(name, &e),
        });
    };

    run(
        "duality",
        1e-10,
        "max |<H(b), a> - <b, H(a)>| / (|<H(b), a>| + 1)",
        &mut || {
            let mut worst = 0.0f64;
            for (w, a, b) in &instances {
                let lhs = pair(&h(w, b)?, a.as_slice());
                let rhs = pair(b.as_slice(), &h(w, a)?);
                worst = worst.max((lhs - rhs).abs() / (lhs.abs() + 1.0));
            }
            Ok(worst)
        },
    );

    run(
        "pushforward_fd",
        1e-4,
        "max ||(G(w + e v_c) - G(w - e v_c)) / 2e - (H(c) + H(c)*)|| / (||H + H*|| + 1), e = 1e-6",
        &mut || {
            let eps = 1e-6;
            let mut worst = 0.0f64;
            for (w, c, _) in &instances {
                let v = tangent_from_coords(w, c)?.into_ambient();
                let mut plus = w.clone();
                plus.axpy(eps, &v);
                let mut minus = w.clone();
                minus.axpy(-eps, &v);
                let push = Moments::new(h(w, c)?.iter().map(|m| m + m.adjoint()).collect());
                let (gp, gm) = (moments(&plus), moments(&minus));
                let err: f64 = gp
                    .as_slice()
                    .iter()
                    .zip(gm.as_slice())
                    .zip(push.as_slice())
                    .map(|((p, m), q)| linalg::fro_sq(&((p - m) * T::from_real(0.5 / eps) - q)))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(err / (push.norm() + 1.0));
            }
            Ok(worst)
        },
    );

    run(
        "metric_induced",
        1e-10,
        "max |g(a, b) - <v_a, v_b>| / (|<v_a, v_b>| + 1)",
        &mut || {
            let mut worst = 0.0f64;
            for (w, a, b) in &instances {
                let g = fiber_metric(w, a, b)?;
                let amb = tangent_from_coords(w, a)?.into_ambient().inner(tangent_from_coords(w, b)?.ambient());
                worst = worst.max((g - amb).abs() / (amb.abs() + 1.0));
            }
            Ok(worst)
        },
    );

    run(
        "tangency",
        1e-10,
        "max ||dX[v_a]|| / (||w||^N + 1)",
        &mut || {
            let mut worst = 0.0f64;
            for (w, a, _) in &instances {
                let v = tangent_from_coords(w, a)?.into_ambient();
                let scale = ridge_norm_sq(w).sqrt().powi(n as i32) * (a.norm() + 1.0);
                worst = worst.max(fro(&end_to_end_derivative(w, &v)) / (scale + 1.0));
            }
            Ok(worst)
        },
    );

    run(
        "metric_differential",
        1e-8,
        "max |g(b, a) - dR(a)| / (|dR(a)| + 1), b the ridge gradient coordinates",
        &mut || {
            let mut worst = 0.0f64;
            for (w, a, _) in &instances {
                let b = ridge_gradient_solve(w, SpdMethod::Dense, false)?.coords;
                let lhs = fiber_metric(w, &b, a)?;
                let rhs = ridge_differential(w, a)?;
                worst = worst.max((lhs - rhs).abs() / (rhs.abs() + 1.0));
            }
            Ok(worst)
        },
    );

    run(
        "ambient_decomposition",
        1e-8,
        "max |<2w - v_b, v_a>| / (||2w|| ||v_a|| + 1)",
        &mut || {
            let mut worst = 0.0f64;
            for (w, a, _) in &instances {
                let b = ridge_gradient_solve(w, SpdMethod::Dense, false)?.coords;
                let mut rem = w.scaled(2.0);
                rem.axpy(-1.0, tangent_from_coords(w, &b)?.ambient());
                let va = tangent_from_coords(w, a)?.into_ambient();
                let scale = 2.0 * ridge_norm_sq(w).sqrt() * va.inner(&va).sqrt();
                worst = worst.max(rem.inner(&va).abs() / (scale + 1.0));
            }
            Ok(worst)
        },
    );

    run(
        "solver_routes",
        1e-8,
        "max ||b_dense - b_cg|| / (||b_dense|| + 1)",
        &mut || {
            let mut worst = 0.0f64;
            for (w, _, _) in instances.iter().take(5) {
                let dense = ridge_gradient_solve(w, SpdMethod::Dense, false)?.coords;
                let cg = ridge_gradient_solve(w, SpdMethod::ConjugateGradient, false)?.coords;
                let diff: f64 = dense
                    .as_slice()
                    .iter()
                    .zip(cg.as_slice())
                    .map(|(x, y)| linalg::fro_sq(&(x - y)))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(diff / (dense.norm() + 1.0));
            }
            Ok(worst)
        },
    );

    let w0 = instances[0].0.clone();
    run(
        "decay_law",
        1e-6,
        "max_k max_ij |G_k(1) - G_k(0) e^-4|_ij / max_ij |G_k(0) e^-4|_ij, rk4 dt = 1e-3",
        &mut || {
            let r = regularizing_flow(&w0, &IntegratorSpec::rk4(1e-3, 1.0).with_stride(1000))?;
            let expected = moments(&w0).scaled((-4.0f64).exp());
            Ok(max_entrywise_relative(&moments(&r.final_chain), &expected))
        },
    );

    run(
        "conservation",
        1e-7,
        "max_t ||G(t) - G(0)||, learning flow with quadratic loss, t in [0, 1], rk4 dt = 1e-3",
        &mut || {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC0);
            let w = Chain::<T>::random(n, d, &mut rng)?.scaled(1.0 / (d as f64).sqrt().max(1.0));
            let y: Mat<T> = linalg::random_matrix(d, &mut rng);
            let loss = LossSpec::quadratic(y)?;
            let g0 = moments(&w);
            let mut worst = 0.0f64;
            let spec = IntegratorSpec::rk4(1e-3, 1.0).with_stride(10);
            // Re-integrate segment by segment to see intermediate moments.
            let mut cur = w.clone();
            for _ in 0..10 {
                let r = learning_flow(&cur, &loss, &IntegratorSpec { t_end: 0.1, ..spec })?;
                cur = r.final_chain;
                worst = worst.max(moments(&cur).distance(&g0));
            }
            Ok(worst)
        },
    );

    run(
        "ness_monotone",
        1e-12,
        "largest relative increase of ||G||^2 between samples of the Ness flow, rk4 dt = 1e-3",
        &mut || {
            let scale = ridge_norm_sq(&w0);
            let start = w0.scaled(1.0 / scale.sqrt().max(1.0));
            let r = ness_flow(&start, &IntegratorSpec::rk4(1e-3, 1.0).with_stride(10))?;
            let g: Vec<f64> = r.trace.g_norms().iter().map(|x| x * x).collect();
            Ok(g.windows(2).map(|p| (p[1] - p[0]) / p[0].max(1e-300)).fold(0.0, f64::max))
        },
    );

    run(
        "kempf_ness",
        0.0,
        "number of failed assertions among: equal values, balanced, unitary-related, center critical",
        &mut || {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4B4E);
            let x: Mat<T> = linalg::random_matrix(d, &mut rng);
            let r = verify_kempf_ness(&x, n, cfg.trials, cfg.seed)?;
            Ok([r.same_value, r.balanced, r.unitary_related, r.center_critical]
                .iter()
                .filter(|ok| !**ok)
                .count() as f64)
        },
    );

    run(
        "center_balanced",
        1e-10,
        "||G(center(X))|| / ||X||^(2/N)",
        &mut || {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xCE);
            let x: Mat<T> = linalg::random_matrix(d, &mut rng);
            let c = center(&x, n)?;
            Ok(balancedness_residual(&c) / fro(&x).powf(2.0 / n as f64))
        },
    );

    run(
        "realization_invariance",
        1e-9,
        "max relative change of H(z) at 5 probes under a random similarity",
        &mut || {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5A);
            let sys = StateSpace::<T>::random(d.max(2), 2, 2, &mut rng)?;
            let m = Mat::<T>::identity(sys.states(), sys.states())
                + linalg::random_matrix::<T, _>(sys.states(), &mut rng) * T::from_real(0.5);
            let t = similarity_action(&m, &sys)?;
            transfer_drift(&sys, &t, &probe_points(&sys, 5))
        },
    );

    out
}

/// `max_k max_ij |a_k - b_k|_ij / max_ij |b_k|_ij`.
pub fn max_entrywise_relative<T: Scalar>(a: &Moments<T>, b: &Moments<T>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| {
            let err = (x - y).iter().map(|e| e.modulus()).fold(0.0, f64::max);
            let size = y.iter().map(|e| e.modulus()).fold(0.0, f64::max);
            if size == 0.0 {
                err
            } else {
                err / size
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupt_operator_breaks_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Chain::<f64>::random(3, 2, &mut rng).unwrap();
        let a = TangentCoords::random(3, 2, &mut rng);
        let b = TangentCoords::random(3, 2, &mut rng);
        let lhs = pair(&corrupt_h(&w, &b).unwrap(), a.as_slice());
        let rhs = pair(b.as_slice(), &corrupt_h(&w, &a).unwrap());
        assert!((lhs - rhs).abs() > 1e-3);
    }

    #[test]
    fn entrywise_relative_error() {
        let a = Moments::new(vec![Mat::<f64>::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0])]);
        let b = Moments::new(vec![Mat::<f64>::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0])]);
        assert_eq!(max_entrywise_relative(&a, &b), 0.5);
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(run_battery(&BatteryConfig { d: 0, ..Default::default() }).is_err());
        assert!(run_battery(&BatteryConfig { n: 1, ..Default::default() }).is_err());
    }
}
