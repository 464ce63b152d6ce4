//! State-space triples `(A, B, C)`, their transfer functions, the
//! similarity action and norm-balanced realizations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, singular_values, Mat};
use crate::optim::{descend, DescentOptions};
use crate::scalar::Scalar;
use crate::Complex64;

/// Poles closer than this (smallest singular value of `zI - A`) are refused.
pub const POLE_TOL: f64 = 1e-10;
/// Similarity transforms need `sigma_min(M)` above this.
pub const SIMILARITY_SIGMA_MIN: f64 = 1e-10;
/// Kalman rank test: `sigma_min > MINIMALITY_RTOL * sigma_max`.
pub const MINIMALITY_RTOL: f64 = 1e-8;
/// Balancing has converged once the gradient norm is at or below this.
pub const BALANCE_GRAD_TOL: f64 = 1e-7;

/// `x' = A x + B u`, `y = C x`, with `A` n x n, `B` n x m, `C` p x n.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace<T: Scalar> {
    a: Mat<T>,
    b: Mat<T>,
    c: Mat<T>,
}

impl<T: Scalar> StateSpace<T> {
    pub fn new(a: Mat<T>, b: Mat<T>, c: Mat<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::NonSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if n == 0 {
            return Err(Error::invalid("n", "state dimension must be at least 1"));
        }
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!("B has {} rows, A is {n} x {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::DimensionMismatch(format!("C has {} columns, A is {n} x {n}", c.ncols())));
        }
        Ok(StateSpace { a, b, c })
    }

    /// Gaussian `A`, `B`, `C`.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, p: usize, rng: &mut R) -> Result<Self> {
        let a = linalg::random_matrix(n, rng);
        let b = linalg::random_rect(n, m, rng);
        let c = linalg::random_rect(p, n, rng);
        Self::new(a, b, c)
    }

    pub fn a(&self) -> &Mat<T> {
        &self.a
    }

    pub fn b(&self) -> &Mat<T> {
        &self.b
    }

    pub fn c(&self) -> &Mat<T> {
        &self.c
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `||A||_F^2 + ||B||_F^2 + ||C||_F^2`.
    pub fn cost(&self) -> f64 {
        linalg::fro_sq(&self.a) + linalg::fro_sq(&self.b) + linalg::fro_sq(&self.c)
    }

    /// `[B, AB, ..., A^{n-1} B]`.
    pub fn controllability_matrix(&self) -> Mat<T> {
        let n = self.states();
        let m = self.inputs();
        let mut out = Mat::zeros(n, n * m);
        let mut block = self.b.clone();
        for i in 0..n {
            out.view_mut((0, i * m), (n, m)).copy_from(&block);
            block = &self.a * block;
        }
        out
    }

    /// `[C; CA; ...; C A^{n-1}]`.
    pub fn observability_matrix(&self) -> Mat<T> {
        let n = self.states();
        let p = self.outputs();
        let mut out = Mat::zeros(n * p, n);
        let mut block = self.c.clone();
        for i in 0..n {
            out.view_mut((i * p, 0), (p, n)).copy_from(&block);
            block *= &self.a;
        }
        out
    }

    /// Kalman rank test on both matrices at relative threshold
    /// [`MINIMALITY_RTOL`].
    pub fn minimality(&self) -> Minimality {
        let ratio = |m: &Mat<T>| {
            let s = singular_values(m);
            let n = self.states();
            if s.len() < n || s[0] == 0.0 {
                0.0
            } else {
                s[n - 1] / s[0]
            }
        };
        let controllability = ratio(&self.controllability_matrix());
        let observability = ratio(&self.observability_matrix());
        Minimality {
            controllability,
            observability,
            minimal: controllability > MINIMALITY_RTOL && observability > MINIMALITY_RTOL,
        }
    }
}

/// `sigma_n / sigma_1` of the controllability and observability matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minimality {
    pub controllability: f64,
    pub observability: f64,
    pub minimal: bool,
}

fn to_complex<T: Scalar>(m: &Mat<T>) -> Mat<Complex64> {
    m.map(|x| Complex64::new(x.real(), x.imaginary()))
}

/// `H(z) = C (zI - A)^{-1} B`, via an LU solve of `(zI - A) Y = B`.
pub fn transfer_function<T: Scalar>(sys: &StateSpace<T>, z: Complex64) -> Result<Mat<Complex64>> {
    let n = sys.states();
    let shifted = Mat::<Complex64>::identity(n, n) * z - to_complex(&sys.a);
    let smin = *singular_values(&shifted).last().expect("n >= 1");
    if smin < POLE_TOL {
        return Err(Error::Pole {
            re: z.re,
            im: z.im,
            sigma_min: smin,
        });
    }
    let y = shifted.lu().solve(&to_complex(&sys.b)).ok_or(Error::Pole {
        re: z.re,
        im: z.im,
        sigma_min: smin,
    })?;
    Ok(to_complex(&sys.c) * y)
}

fn inverse_checked<T: Scalar>(m: &Mat<T>) -> Result<Mat<T>> {
    let n = linalg::require_square(m)?;
    let smin = *singular_values(m).last().unwrap_or(&0.0);
    if !(smin > SIMILARITY_SIGMA_MIN) || n == 0 {
        return Err(Error::NearSingular { index: 0, sigma_min: smin });
    }
    m.clone().try_inverse().ok_or(Error::NearSingular { index: 0, sigma_min: smin })
}

/// `(M A M^{-1}, M B, C M^{-1})`.
pub fn similarity_action<T: Scalar>(m: &Mat<T>, sys: &StateSpace<T>) -> Result<StateSpace<T>> {
    if m.nrows() != sys.states() {
        return Err(Error::DimensionMismatch(format!(
            "M is {} x {}, system has {} states",
            m.nrows(),
            m.ncols(),
            sys.states()
        )));
    }
    let inv = inverse_checked(m)?;
    StateSpace::new(m * &sys.a * &inv, m * &sys.b, &sys.c * inv)
}

/// Balancing cost at `M` and its gradient `2 K M^{-*}` with
/// `K = A'A'* - A'*A' + B'B'* - C'*C'` for the transformed triple `(A', B', C')`.
pub fn balancing_cost_and_gradient<T: Scalar>(sys: &StateSpace<T>, m: &Mat<T>) -> Result<(f64, Mat<T>)> {
    let t = similarity_action(m, sys)?;
    let k = &t.a * t.a.adjoint() - t.a.adjoint() * &t.a + &t.b * t.b.adjoint() - t.c.adjoint() * &t.c;
    let inv = inverse_checked(m)?;
    Ok((t.cost(), k * inv.adjoint() * T::from_real(2.0)))
}

/// Fixed probe points on a circle strictly outside the spectrum of `A`.
pub fn probe_points<T: Scalar>(sys: &StateSpace<T>, count: usize) -> Vec<Complex64> {
    let radius = 1.0 + 2.0 * linalg::fro(&sys.a);
    (0..count)
        .map(|j| Complex64::from_polar(radius, 0.3 + std::f64::consts::TAU * j as f64 / count as f64))
        .collect()
}

/// Largest relative change of `H` over `probes`.
pub fn transfer_drift<T: Scalar>(a: &StateSpace<T>, b: &StateSpace<T>, probes: &[Complex64]) -> Result<f64> {
    let mut worst = 0.0f64;
    for &z in probes {
        let ha = transfer_function(a, z)?;
        let hb = transfer_function(b, z)?;
        worst = worst.max(linalg::fro(&(&ha - &hb)) / linalg::fro(&ha).max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceOptions {
    pub restarts: usize,
    /// Restart `i` starts from `I + init_scale * Gaussian` drawn with seed
    /// `seed + i`; restart 0 starts from `I` when `init_scale` is 0.
    pub seed: u64,
    pub init_scale: f64,
    pub probes: usize,
    pub descent: DescentOptions,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        BalanceOptions {
            restarts: 1,
            seed: 0,
            init_scale: 0.0,
            probes: 5,
            descent: DescentOptions {
                grad_tol: 1e-9,
                sigma_guard: SIMILARITY_SIGMA_MIN,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceStatus {
    /// Gradient norm reached [`BALANCE_GRAD_TOL`].
    Converged,
    /// Minimal system, but descent stopped early.
    NotConverged,
    /// The Kalman rank test failed; the similarity orbit need not be closed
    /// and a minimum need not exist. Descent was still run and is reported.
    NonMinimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRestart {
    pub restart: usize,
    pub seed: u64,
    pub cost: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub line_search_failed: bool,
}

#[derive(Debug, Clone)]
pub struct BalancingResult<T: Scalar> {
    pub status: BalanceStatus,
    pub minimality: Minimality,
    pub m: Mat<T>,
    pub transformed: StateSpace<T>,
    pub initial_cost: f64,
    pub cost: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// Cost after every accepted step of the reported restart.
    pub cost_trajectory: Vec<f64>,
    pub probes: Vec<Complex64>,
    /// Largest relative change of `H` at the probes over every point the
    /// descent evaluated, for the reported restart.
    pub tf_drift: f64,
    pub restart: usize,
    /// `(max - min) / min` of the final cost over restarts.
    pub restart_spread: f64,
    pub per_restart: Vec<BalanceRestart>,
}

fn initial_m<T: Scalar>(n: usize, scale: f64, seed: u64) -> Mat<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let m = Mat::<T>::identity(n, n) + linalg::random_matrix::<T, _>(n, &mut rng) * T::from_real(scale);
        if singular_values(&m).last().is_some_and(|&s| s > 1e-3) {
            return m;
        }
    }
}

struct BalanceRun<T: Scalar> {
    record: BalanceRestart,
    m: Mat<T>,
    history: Vec<f64>,
    drift: f64,
}

/// Minimize `||MAM^{-1}||^2 + ||MB||^2 + ||CM^{-1}||^2` over invertible `M`
/// by gradient descent from `opts.restarts` starting points.
pub fn balance_realization<T: Scalar>(sys: &StateSpace<T>, opts: &BalanceOptions) -> Result<BalancingResult<T>> {
    if opts.restarts == 0 {
        return Err(Error::invalid("restarts", "must be at least 1"));
    }
    let n = sys.states();
    let minimality = sys.minimality();
    let probes = probe_points(sys, opts.probes);
    let reference: Vec<Mat<Complex64>> = probes.iter().map(|&z| transfer_function(sys, z)).collect::<Result<_>>()?;

    let runs = (0..opts.restarts)
        .into_par_iter()
        .map(|i| -> Result<BalanceRun<T>> {
            let seed = opts.seed.wrapping_add(i as u64);
            let m0 = initial_m::<T>(n, opts.init_scale, seed);
            let mut drift = 0.0f64;
            let out = descend(vec![m0], &opts.descent, |m| {
                let (cost, grad) = balancing_cost_and_gradient(sys, &m[0])?;
                let t = similarity_action(&m[0], sys)?;
                for (z, h0) in probes.iter().zip(&reference) {
                    let h = transfer_function(&t, *z)?;
                    drift = drift.max(linalg::fro(&(&h - h0)) / linalg::fro(h0).max(f64::MIN_POSITIVE));
                }
                Ok((cost, vec![grad]))
            })?;
            Ok(BalanceRun {
                record: BalanceRestart {
                    restart: i,
                    seed,
                    cost: out.value,
                    gradient_norm: out.grad_norm,
                    iterations: out.iterations,
                    line_search_failed: out.line_search_failed,
                },
                m: out.point.into_iter().next().expect("one variable"),
                history: out.history,
                drift,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = runs
        .iter()
        .min_by(|a, b| a.record.cost.total_cmp(&b.record.cost))
        .expect("at least one restart");
    let lo = runs.iter().map(|r| r.record.cost).fold(f64::INFINITY, f64::min);
    let hi = runs.iter().map(|r| r.record.cost).fold(f64::NEG_INFINITY, f64::max);
    let status = if !minimality.minimal {
        BalanceStatus::NonMinimal
    } else if best.record.gradient_norm <= BALANCE_GRAD_TOL {
        BalanceStatus::Converged
    } else {
        BalanceStatus::NotConverged
    };
    Ok(BalancingResult {
        status,
        minimality,
        transformed: similarity_action(&best.m, sys)?,
        m: best.m.clone(),
        initial_cost: best.history[0],
        cost: best.record.cost,
        gradient_norm: best.record.gradient_norm,
        iterations: best.record.iterations,
        cost_trajectory: best.history.clone(),
        probes,
        tf_drift: best.drift,
        restart: best.record.restart,
        restart_spread: (hi - lo) / lo.max(f64::MIN_POSITIVE),
        per_restart: runs.iter().map(|r| r.record.clone()).collect(),
    })
}
