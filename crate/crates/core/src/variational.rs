//! Norm minimization over a fiber, parametrized by the group orbit of its
//! center: `w = A . C` with `C = center(X)` and free factors `A_k`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{
    balancedness_residual, center, check_exponent, fiber_residual, gl_action, relate_chains, ridge_norm_sq,
    schatten_p, Chain, GroupElement,
};
use crate::error::{Error, Result};
use crate::linalg::{self, check_full_rank, singular_values, Mat, FULL_RANK_RTOL};
use crate::optim::{descend, DescentOptions};
use crate::scalar::Scalar;

/// The norm being minimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Objective {
    /// `||w||_2^2 = sum_k ||W_k||_F^2`.
    Ridge,
    /// `sum_k ||W_k||_p`, `1 < p < inf`.
    Schatten { p: f64 },
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Objective::Ridge => Ok(()),
            Objective::Schatten { p } => check_exponent(p),
        }
    }

    pub fn value<T: Scalar>(&self, w: &Chain<T>) -> f64 {
        match *self {
            Objective::Ridge => ridge_norm_sq(w),
            Objective::Schatten { p } => w.layers().iter().map(|m| schatten_p(m, p)).sum(),
        }
    }

    /// Closed-form minimum over the fiber of a matrix with singular values
    /// `sigma`: `N sum sigma^{2/N}` or `N (sum sigma^{p/N})^{1/p}`.
    pub fn analytic_minimum(&self, sigma: &[f64], depth: usize) -> f64 {
        let n = depth as f64;
        match *self {
            Objective::Ridge => n * sigma.iter().map(|s| s.powf(2.0 / n)).sum::<f64>(),
            Objective::Schatten { p } => n * sigma.iter().map(|s| s.powf(p / n)).sum::<f64>().powf(1.0 / p),
        }
    }

    /// Gradient of the per-layer term at `w` (real Frobenius pairing).
    fn layer_gradient<T: Scalar>(&self, w: &Mat<T>) -> Result<Mat<T>> {
        match *self {
            Objective::Ridge => Ok(w * T::from_real(2.0)),
            Objective::Schatten { p } => {
                // d||W||_p = ||W||_p^{1-p} U S^{p-1} V*
                let dec = linalg::svd(w)?;
                let norm = dec.sigma.iter().map(|s| s.powf(p)).sum::<f64>().powf(1.0 / p);
                let scale = norm.powf(1.0 - p);
                let mut us = dec.u.clone();
                for (j, s) in dec.sigma.iter().enumerate() {
                    let f = scale * s.powf(p - 1.0);
                    us.column_mut(j).scale_mut(f);
                }
                Ok(us * dec.v.adjoint())
            }
        }
    }
}

/// Objective value at `A . base` and its gradient with respect to the
/// entries of the factors of `A` (storage order, `A_{N-1}` first).
///
/// With `D_k` the layer gradients at `W = A . base`, the gradient for
/// `A_j` is `(A_j^{-1} (W_j D_j* - D_{j+1}* W_{j+1}))*`.
pub fn orbit_value_and_gradient<T: Scalar>(
    objective: &Objective,
    base: &Chain<T>,
    factors: &[Mat<T>],
) -> Result<(f64, Vec<Mat<T>>)> {
    let n = base.depth();
    let w = gl_action(&GroupElement::new(factors.to_vec()), base)?;
    let d = (1..=n)
        .rev()
        .map(|k| objective.layer_gradient(w.layer(k)))
        .collect::<Result<Vec<_>>>()?;
    let dk = |k: usize| &d[n - k];
    let grads = (1..n)
        .rev()
        .map(|j| {
            let a = &factors[n - 1 - j];
            let inv = a.clone().try_inverse().ok_or(Error::NearSingular {
                index: j,
                sigma_min: *singular_values(a).last().unwrap_or(&0.0),
            })?;
            let inner = w.layer(j) * dk(j).adjoint() - dk(j + 1).adjoint() * w.layer(j + 1);
            Ok((inv * inner).adjoint())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((objective.value(&w), grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub restarts: usize,
    /// Restart `i` draws its initial factors from seed `seed + i`.
    pub seed: u64,
    /// Initial factors are `I + init_scale * Gaussian`.
    pub init_scale: f64,
    pub descent: DescentOptions,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            restarts: 4,
            seed: 0,
            init_scale: 0.5,
            descent: DescentOptions {
                grad_tol: 1e-11,
                value_slack: 1e-15,
                ..Default::default()
            },
        }
    }
}

impl MinimizeOptions {
    pub fn with_restarts(mut self, restarts: usize, seed: u64) -> Self {
        self.restarts = restarts;
        self.seed = seed;
        self
    }
}

/// Outcome of one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart: usize,
    pub seed: u64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    pub gradient_norm: f64,
    pub balance_residual: f64,
    pub fiber_residual: f64,
}

/// Serializable summary of a minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizationReport {
    pub objective_kind: Objective,
    pub depth: usize,
    pub width: usize,
    pub objective: f64,
    pub analytic_value: f64,
    pub relative_gap: f64,
    pub balance_residual: f64,
    pub fiber_residual: f64,
    pub restarts: usize,
    /// Index of the restart that produced the reported minimizer.
    pub restart: usize,
    pub iterations: usize,
    pub converged: bool,
    /// `(max - min) / min` of the objective over all restarts.
    pub restart_spread: f64,
    /// Singular values of each layer, `W_N` first.
    pub layer_singular_values: Vec<Vec<f64>>,
    pub per_restart: Vec<RestartRecord>,
}

#[derive(Debug, Clone)]
pub struct MinimizationResult<T: Scalar> {
    pub minimizer: Chain<T>,
    pub report: MinimizationReport,
    /// Final chain of every restart, in restart order.
    pub restart_minimizers: Vec<Chain<T>>,
    /// Final group element of every restart, in restart order.
    pub restart_factors: Vec<GroupElement<T>>,
}

impl<T: Scalar> MinimizationResult<T> {
    pub fn objective(&self) -> f64 {
        self.report.objective
    }

    pub fn converged(&self) -> bool {
        self.report.converged
    }
}

fn initial_factors<T: Scalar>(depth: usize, d: usize, scale: f64, seed: u64) -> Vec<Mat<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..depth - 1)
        .map(|_| loop {
            let a = Mat::<T>::identity(d, d) + linalg::random_matrix::<T, _>(d, &mut rng) * T::from_real(scale);
            if singular_values(&a).last().is_some_and(|&s| s >= 1e-8) {
                break a;
            }
        })
        .collect()
}

struct RestartRun<T: Scalar> {
    record: RestartRecord,
    chain: Chain<T>,
    factors: GroupElement<T>,
}

/// Minimize `objective` over the fiber of `x` with `restarts` independent
/// gradient descents in the orbit parametrization.
pub fn minimize_on_fiber<T: Scalar>(
    x: &Mat<T>,
    depth: usize,
    objective: Objective,
    opts: &MinimizeOptions,
) -> Result<MinimizationResult<T>> {
    objective.validate()?;
    if opts.restarts == 0 {
        return Err(Error::invalid("restarts", "must be at least 1"));
    }
    check_full_rank(x, FULL_RANK_RTOL)?;
    let base = center(x, depth)?;
    let d = x.nrows();
    let runs = (0..opts.restarts)
        .into_par_iter()
        .map(|i| -> Result<RestartRun<T>> {
            let seed = opts.seed.wrapping_add(i as u64);
            let a0 = initial_factors::<T>(depth, d, opts.init_scale, seed);
            let out = descend(a0, &opts.descent, |a| orbit_value_and_gradient(&objective, &base, a))?;
            let factors = GroupElement::new(out.point);
            let chain = gl_action(&factors, &base)?;
            Ok(RestartRun {
                record: RestartRecord {
                    restart: i,
                    seed,
                    objective: out.value,
                    iterations: out.iterations,
                    converged: out.converged,
                    line_search_failed: out.line_search_failed,
                    gradient_norm: out.grad_norm,
                    balance_residual: balancedness_residual(&chain),
                    fiber_residual: fiber_residual(&chain, x)?,
                },
                chain,
                factors,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = runs
        .iter()
        .min_by(|a, b| a.record.objective.total_cmp(&b.record.objective))
        .expect("at least one restart");
    let values: Vec<f64> = runs.iter().map(|r| r.record.objective).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let analytic_value = objective.analytic_minimum(&singular_values(x), depth);
    let minimizer = best.chain.clone();
    let report = MinimizationReport {
        objective_kind: objective,
        depth,
        width: d,
        objective: best.record.objective,
        analytic_value,
        relative_gap: (best.record.objective - analytic_value).abs() / analytic_value,
        balance_residual: best.record.balance_residual,
        fiber_residual: best.record.fiber_residual,
        restarts: opts.restarts,
        restart: best.record.restart,
        iterations: best.record.iterations,
        converged: runs.iter().all(|r| r.record.converged),
        restart_spread: (hi - lo) / lo,
        layer_singular_values: minimizer.layers().iter().map(singular_values).collect(),
        per_restart: runs.iter().map(|r| r.record.clone()).collect(),
    };
    let (restart_minimizers, restart_factors) = runs.into_iter().map(|r| (r.chain, r.factors)).unzip();
    Ok(MinimizationResult {
        minimizer,
        report,
        restart_minimizers,
        restart_factors,
    })
}

/// Minimize `||w||_2^2` over the fiber of `x`.
pub fn minimize_ridge_on_fiber<T: Scalar>(x: &Mat<T>, depth: usize, opts: &MinimizeOptions) -> Result<MinimizationResult<T>> {
    minimize_on_fiber(x, depth, Objective::Ridge, opts)
}

/// Minimize `sum_k ||W_k||_p` over the fiber of `x`.
pub fn minimize_schatten_on_fiber<T: Scalar>(
    x: &Mat<T>,
    depth: usize,
    p: f64,
    opts: &MinimizeOptions,
) -> Result<MinimizationResult<T>> {
    minimize_on_fiber(x, depth, Objective::Schatten { p }, opts)
}

/// Tolerances of the Kempf-Ness verifier.
pub const KN_VALUE_RTOL: f64 = 1e-6;
pub const KN_BALANCE_RTOL: f64 = 1e-6;
pub const KN_UNITARY_TOL: f64 = 1e-6;
pub const KN_CENTER_GRAD_TOL: f64 = 1e-9;

/// A failing instance reported by [`verify_kempf_ness`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub check: String,
    pub restart: usize,
    pub seed: u64,
    /// Packed real coordinates of the restart's final group element.
    pub group_element: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KempfNessReport {
    pub trials: usize,
    pub values: Vec<f64>,
    /// (a) all converged critical points share one value.
    pub value_spread: f64,
    pub same_value: bool,
    /// (b) all converged critical points are balanced.
    pub max_balance_residual: f64,
    pub balanced: bool,
    /// (c) minimizers are related by unitary elements.
    pub max_unitary_defect: f64,
    pub unitary_related: bool,
    /// (d) the center is critical.
    pub center_gradient_norm: f64,
    pub center_critical: bool,
    /// Real field: sign patterns `sign det U_k` (`U_{N-1}` first) of the
    /// orthogonal elements relating each minimizer to the first one.
    /// Distinct patterns are distinct components of the orthogonal orbit.
    pub components: Vec<Vec<i8>>,
    pub passed: bool,
    pub counterexample: Option<Counterexample>,
}

/// Check the global-minimum and unique-orbit properties of ridge
/// minimizers over the fiber of `x` by `trials` random restarts.
pub fn verify_kempf_ness<T: Scalar>(x: &Mat<T>, depth: usize, trials: usize, seed: u64) -> Result<KempfNessReport> {
    let opts = MinimizeOptions::default().with_restarts(trials, seed);
    let result = minimize_ridge_on_fiber(x, depth, &opts)?;
    let scale = linalg::fro(x).powf(2.0 / depth as f64).max(f64::MIN_POSITIVE);
    let recs = &result.report.per_restart;
    let converged: Vec<usize> = (0..recs.len()).filter(|&i| recs[i].converged).collect();
    let values: Vec<f64> = recs.iter().map(|r| r.objective).collect();

    let counter = |check: &str, i: usize, vals: Vec<f64>| Counterexample {
        check: check.to_string(),
        restart: i,
        seed: recs[i].seed,
        group_element: linalg::pack(result.restart_factors[i].factors()),
        values: vals,
    };
    let mut counterexample = None;

    let reference = converged
        .iter()
        .map(|&i| values[i])
        .fold(f64::INFINITY, f64::min);
    let mut value_spread = 0.0f64;
    for &i in &converged {
        let gap = (values[i] - reference).abs() / reference;
        if gap > KN_VALUE_RTOL && counterexample.is_none() {
            counterexample = Some(counter("same_value", i, vec![values[i], reference]));
        }
        value_spread = value_spread.max(gap);
    }
    if converged.is_empty() {
        counterexample = Some(counter("converged", 0, values.clone()));
    }
    let same_value = !converged.is_empty() && value_spread <= KN_VALUE_RTOL;

    let mut max_balance_residual = 0.0f64;
    for &i in &converged {
        let r = recs[i].balance_residual;
        if r > KN_BALANCE_RTOL * scale && counterexample.is_none() {
            counterexample = Some(counter("balanced", i, vec![r]));
        }
        max_balance_residual = max_balance_residual.max(r);
    }
    let balanced = max_balance_residual <= KN_BALANCE_RTOL * scale;

    let mut max_unitary_defect = 0.0f64;
    let mut components: Vec<Vec<i8>> = Vec::new();
    if let Some(&first) = converged.first() {
        for &i in &converged {
            let u = relate_chains(&result.restart_minimizers[first], &result.restart_minimizers[i])?;
            let defect = u.max_unitarity_defect();
            if defect > KN_UNITARY_TOL && counterexample.is_none() {
                counterexample = Some(counter("unitary_related", i, vec![defect]));
            }
            max_unitary_defect = max_unitary_defect.max(defect);
            if T::FIELD == crate::scalar::Field::Real {
                let label: Vec<i8> = u
                    .factors()
                    .iter()
                    .map(|m| if m.determinant().real() >= 0.0 { 1 } else { -1 })
                    .collect();
                if !components.contains(&label) {
                    components.push(label);
                }
            }
        }
    }
    let unitary_related = max_unitary_defect <= KN_UNITARY_TOL;

    let base = center(x, depth)?;
    let identity = GroupElement::<T>::identity(depth, x.nrows()).into_factors();
    let (_, grad) = orbit_value_and_gradient(&Objective::Ridge, &base, &identity)?;
    let center_gradient_norm = grad.iter().map(linalg::fro_sq).sum::<f64>().sqrt();
    let center_critical = center_gradient_norm <= KN_CENTER_GRAD_TOL;
    if !center_critical && counterexample.is_none() {
        counterexample = Some(Counterexample {
            check: "center_critical".into(),
            restart: 0,
            seed,
            group_element: linalg::pack(&identity),
            values: vec![center_gradient_norm],
        });
    }

    Ok(KempfNessReport {
        trials,
        values,
        value_spread,
        same_value,
        max_balance_residual,
        balanced,
        max_unitary_defect,
        unitary_related,
        center_gradient_norm,
        center_critical,
        components,
        passed: same_value && balanced && unitary_related && center_critical,
        counterexample,
    })
}
