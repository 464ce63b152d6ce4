//! Time integration of the deterministic flows and the two stochastic models.
//!
//! Deterministic flows use a fixed-step integrator (RK4 by default) with no
//! projection back onto the fiber: drift of the end-to-end matrix is recorded
//! as a diagnostic instead. Stochastic models use Euler-Maruyama with an
//! explicitly seeded ChaCha generator.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{end_to_end, moments, ridge_norm_sq, Chain, Moments};
use crate::error::{Error, Result};
use crate::fiber::{ridge_gradient_solve, tangent_from_coords, TangentCoords};
use crate::linalg::{self, fro, Mat, SpdMethod};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Rk4,
    Euler,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Scheme::Rk4),
            "euler" => Ok(Scheme::Euler),
            other => Err(Error::invalid("scheme", format!("expected `rk4` or `euler`, got `{other}`"))),
        }
    }
}

/// Fixed-step integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    /// Record a diagnostic sample every `sample_stride` steps (the final
    /// state is always recorded).
    pub sample_stride: usize,
}

impl IntegratorSpec {
    pub fn rk4(dt: f64, t_end: f64) -> Self {
        IntegratorSpec {
            scheme: Scheme::Rk4,
            dt,
            t_end,
            sample_stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.sample_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid("t_end", format!("must be non-negative, got {}", self.t_end)));
        }
        if self.sample_stride == 0 {
            return Err(Error::invalid("sample_stride", "must be at least 1"));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// Time after `i` steps; the last step is shortened to land on `t_end`.
    fn time(&self, i: usize) -> f64 {
        (i as f64 * self.dt).min(self.t_end)
    }
}

/// A scalar loss on end-to-end matrices.
///
/// `gradient` is the Riesz representative for `<A, B> = Re Tr(A* B)`:
/// `dE(X)[V] = Re Tr(gradient(X)* V)`.
pub trait Loss<T: Scalar>: Send + Sync {
    fn value(&self, x: &Mat<T>) -> f64;
    fn gradient(&self, x: &Mat<T>) -> Mat<T>;
}

/// `E(X) = 0.5 ||X - Y||_F^2`.
#[derive(Debug, Clone)]
pub struct Quadratic<T: Scalar> {
    pub target: Mat<T>,
}

impl<T: Scalar> Loss<T> for Quadratic<T> {
    fn value(&self, x: &Mat<T>) -> f64 {
        0.5 * linalg::fro_sq(&(x - &self.target))
    }

    fn gradient(&self, x: &Mat<T>) -> Mat<T> {
        x - &self.target
    }
}

/// `E = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroLoss;

impl<T: Scalar> Loss<T> for ZeroLoss {
    fn value(&self, _x: &Mat<T>) -> f64 {
        0.0
    }

    fn gradient(&self, x: &Mat<T>) -> Mat<T> {
        Mat::zeros(x.nrows(), x.ncols())
    }
}

/// A loss whose gradient has passed a finite-difference check.
#[derive(Clone)]
pub struct LossSpec<T: Scalar> {
    loss: Arc<dyn Loss<T>>,
    is_zero: bool,
}

impl<T: Scalar> std::fmt::Debug for LossSpec<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LossSpec").field("is_zero", &self.is_zero).finish()
    }
}

pub const LOSS_FD_STEP: f64 = 1e-6;
pub const LOSS_FD_TOL: f64 = 1e-4;

impl<T: Scalar> LossSpec<T> {
    /// Wrap `loss` after checking its gradient by central differences at a
    /// fixed pseudo-random probe point and direction of width `d`.
    pub fn new(loss: impl Loss<T> + 'static, d: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x10_55);
        let x: Mat<T> = linalg::random_matrix(d, &mut rng);
        let v: Mat<T> = linalg::random_matrix(d, &mut rng);
        let h = T::from_real(LOSS_FD_STEP);
        let fd = (loss.value(&(&x + &v * h)) - loss.value(&(&x - &v * h))) / (2.0 * LOSS_FD_STEP);
        let analytic = linalg::inner(&loss.gradient(&x), &v);
        let rel_err = (fd - analytic).abs() / analytic.abs().max(1.0);
        if !(rel_err <= LOSS_FD_TOL) {
            return Err(Error::LossGradientCheck { rel_err });
        }
        Ok(LossSpec {
            loss: Arc::new(loss),
            is_zero: false,
        })
    }

    pub fn quadratic(target: Mat<T>) -> Result<Self> {
        let d = target.nrows();
        Self::new(Quadratic { target }, d)
    }

    pub fn zero() -> Self {
        LossSpec {
            loss: Arc::new(ZeroLoss),
            is_zero: true,
        }
    }

    pub fn value(&self, x: &Mat<T>) -> f64 {
        self.loss.value(x)
    }

    pub fn gradient(&self, x: &Mat<T>) -> Mat<T> {
        self.loss.gradient(x)
    }
}

/// Ambient (Euclidean) gradient of `E(X(w))`:
/// component k is `(W_N ... W_{k+1})* grad E(X) (W_{k-1} ... W_1)*`.
pub fn loss_gradient<T: Scalar>(w: &Chain<T>, loss: &LossSpec<T>) -> Chain<T> {
    let n = w.depth();
    let d = w.width();
    let mut prefix = vec![Mat::<T>::identity(d, d); n + 1];
    for k in (1..n).rev() {
        prefix[k] = &prefix[k + 1] * w.layer(k + 1);
    }
    let mut suffix = vec![Mat::<T>::identity(d, d); n + 1];
    for k in 2..=n {
        suffix[k] = w.layer(k - 1) * &suffix[k - 1];
    }
    let x = &prefix[1] * w.layer(1);
    let g = loss.gradient(&x);
    let layers = (1..=n)
        .rev()
        .map(|k| prefix[k].adjoint() * &g * suffix[k].adjoint())
        .collect();
    Chain::new(layers).expect("same shape as w")
}

/// One diagnostic row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub t: f64,
    pub g_fro: f64,
    /// `||G_k||_F` for `k = 1..N-1`.
    pub g_k_fro: Vec<f64>,
    pub w_normsq: f64,
    pub loss: Option<f64>,
    pub fiber_drift: f64,
    pub balance_residual: f64,
    /// `||w_G||^2` (Ness flow only).
    pub ness_speed_sq: Option<f64>,
    /// `||G(t) - G(0)||_F`. Not part of the CSV schema, so `None` when read
    /// back from a trace file.
    pub moment_drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub depth: usize,
    pub samples: Vec<FlowSample>,
    /// Seed of the noise generator, for stochastic runs.
    pub seed: Option<u64>,
}

impl FlowTrace {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn g_norms(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.g_fro).collect()
    }

    pub fn last(&self) -> &FlowSample {
        self.samples.last().expect("a trace always holds the initial sample")
    }

    pub fn max_fiber_drift(&self) -> f64 {
        self.samples.iter().map(|s| s.fiber_drift).fold(0.0, f64::max)
    }

    /// Least-squares fit of `log ||G||_F` against t.
    pub fn fit_g_decay(&self) -> Option<DecayFit> {
        fit_log_decay(&self.times(), &self.g_norms(), DECAY_FLOOR)
    }
}

/// Points with `||G||_F` at or below this are excluded from decay fits.
pub const DECAY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fit `log y = intercept + slope * t` over the points with `y > floor`.
pub fn fit_log_decay(t: &[f64], y: &[f64], floor: f64) -> Option<DecayFit> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > floor && v.is_finite())
        .map(|(&a, &b)| (a, b.ln()))
        .collect();
    let n = pts.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if stt == 0.0 {
        return None;
    }
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Some(DecayFit {
        slope,
        intercept,
        r_squared,
        points: n,
    })
}

/// Final state together with its diagnostic trace.
#[derive(Debug, Clone)]
pub struct FlowResult<T: Scalar> {
    pub trace: FlowTrace,
    pub final_chain: Chain<T>,
}

struct Diagnostics<'a, T: Scalar> {
    x0: Mat<T>,
    g0: Moments<T>,
    loss: Option<&'a LossSpec<T>>,
    ness: bool,
}

impl<T: Scalar> Diagnostics<'_, T> {
    fn sample(&self, t: f64, w: &Chain<T>) -> FlowSample {
        let g = moments(w);
        let x = end_to_end(w);
        let ness_speed_sq = self.ness.then(|| {
            tangent_from_coords(w, &TangentCoords::from_moments(&g))
                .expect("moments match chain")
                .norm_sq()
        });
        FlowSample {
            t,
            g_fro: g.norm(),
            g_k_fro: g.component_norms(),
            w_normsq: ridge_norm_sq(w),
            loss: self.loss.map(|l| l.value(&x)),
            fiber_drift: fro(&(&x - &self.x0)),
            balance_residual: crate::chain::balancedness_residual(w),
            ness_speed_sq,
            moment_drift: Some(g.distance(&self.g0)),
        }
    }
}

fn collapse(t: f64, e: Error) -> Error {
    match e {
        Error::RankDeficient { .. } | Error::NotPositiveDefinite { .. } | Error::NoConvergence { .. } => {
            Error::RankCollapse { t, source: Box::new(e) }
        }
        other => other,
    }
}

fn integrate<T, F>(w0: &Chain<T>, spec: &IntegratorSpec, diag: &Diagnostics<'_, T>, mut velocity: F) -> Result<FlowResult<T>>
where
    T: Scalar,
    F: FnMut(&Chain<T>) -> Result<Chain<T>>,
{
    spec.validate()?;
    let steps = spec.steps();
    let mut w = w0.clone();
    let mut samples = vec![diag.sample(0.0, &w)];
    for i in 0..steps {
        let t = spec.time(i);
        let h = spec.time(i + 1) - t;
        let mut f = |x: &Chain<T>| velocity(x).map_err(|e| collapse(t, e));
        match spec.scheme {
            Scheme::Euler => {
                let k1 = f(&w)?;
                w.axpy(h, &k1);
            }
            Scheme::Rk4 => {
                let k1 = f(&w)?;
                let mut y = w.clone();
                y.axpy(0.5 * h, &k1);
                let k2 = f(&y)?;
                let mut y = w.clone();
                y.axpy(0.5 * h, &k2);
                let k3 = f(&y)?;
                let mut y = w.clone();
                y.axpy(h, &k3);
                let k4 = f(&y)?;
                w.axpy(h / 6.0, &k1);
                w.axpy(h / 3.0, &k2);
                w.axpy(h / 3.0, &k3);
                w.axpy(h / 6.0, &k4);
            }
        }
        if !w.is_finite() {
            return Err(Error::RankCollapse {
                t: spec.time(i + 1),
                source: Box::new(Error::NonFinite),
            });
        }
        if (i + 1) % spec.sample_stride == 0 || i + 1 == steps {
            samples.push(diag.sample(spec.time(i + 1), &w));
        }
    }
    Ok(FlowResult {
        trace: FlowTrace {
            depth: w0.depth(),
            samples,
            seed: None,
        },
        final_chain: w,
    })
}

/// Gradient flow of `||w||^2` on the fiber: `dw/dt = -w_b`, `H(b) = 2G`.
pub fn regularizing_flow<T: Scalar>(w0: &Chain<T>, spec: &IntegratorSpec) -> Result<FlowResult<T>> {
    regularizing_flow_with(w0, spec, SpdMethod::Dense)
}

pub fn regularizing_flow_with<T: Scalar>(w0: &Chain<T>, spec: &IntegratorSpec, method: SpdMethod) -> Result<FlowResult<T>> {
    w0.check_full_rank()?;
    let diag = Diagnostics {
        x0: end_to_end(w0),
        g0: moments(w0),
        loss: None,
        ness: false,
    };
    integrate(w0, spec, &diag, |w| regularizing_velocity(w, method))
}

/// `-grad ||w||^2` on the fiber.
pub fn regularizing_velocity<T: Scalar>(w: &Chain<T>, method: SpdMethod) -> Result<Chain<T>> {
    let b = ridge_gradient_solve(w, method, false)?.coords;
    Ok(tangent_from_coords(w, &b)?.into_ambient().scaled(-1.0))
}

/// `-2 w_G`.
pub fn ness_velocity<T: Scalar>(w: &Chain<T>) -> Chain<T> {
    let g = moments(w);
    tangent_from_coords(w, &TangentCoords::from_moments(&g))
        .expect("moments match chain")
        .into_ambient()
        .scaled(-2.0)
}

/// Ness flow `dw/dt = -2 w_G`. Also records `||w_G||^2` per sample.
pub fn ness_flow<T: Scalar>(w0: &Chain<T>, spec: &IntegratorSpec) -> Result<FlowResult<T>> {
    w0.check_full_rank()?;
    let diag = Diagnostics {
        x0: end_to_end(w0),
        g0: moments(w0),
        loss: None,
        ness: true,
    };
    let result = integrate(w0, spec, &diag, |w| Ok(ness_velocity(w)))?;
    result
        .final_chain
        .check_full_rank()
        .map_err(|e| collapse(spec.t_end, e))?;
    Ok(result)
}

/// Ambient gradient flow of `E(X(w))`: `dW_k/dt = -(W_N..W_{k+1})* grad E (W_{k-1}..W_1)*`.
///
/// From balanced initial data this is the learning flow on the balanced
/// manifold, since it conserves every moment.
pub fn learning_flow<T: Scalar>(w0: &Chain<T>, loss: &LossSpec<T>, spec: &IntegratorSpec) -> Result<FlowResult<T>> {
    let diag = Diagnostics {
        x0: end_to_end(w0),
        g0: moments(w0),
        loss: Some(loss),
        ness: false,
    };
    integrate(w0, spec, &diag, |w| Ok(loss_gradient(w, loss).scaled(-1.0)))
}

/// `dw/dt = -grad_w E(X(w)) - kappa w`; moments then obey `dG/dt = -2 kappa G`.
pub fn regularized_flow<T: Scalar>(
    w0: &Chain<T>,
    loss: &LossSpec<T>,
    kappa: f64,
    spec: &IntegratorSpec,
) -> Result<FlowResult<T>> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::invalid("kappa", format!("must be non-negative, got {kappa}")));
    }
    let diag = Diagnostics {
        x0: end_to_end(w0),
        g0: moments(w0),
        loss: Some(loss),
        ness: false,
    };
    integrate(w0, spec, &diag, |w| {
        let mut v = loss_gradient(w, loss).scaled(-1.0);
        v.axpy(-kappa, w);
        Ok(v)
    })
}

/// Euler-Maruyama settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticSpec {
    pub dt: f64,
    pub t_end: f64,
    /// Samples taken before this time are not accumulated into statistics.
    pub burn_in: f64,
    /// Accumulate statistics every this many steps after burn-in.
    pub sample_every: usize,
    /// Record a trace row every this many steps.
    pub trace_every: usize,
    /// Keep every accumulated state in [`StochasticRun::samples`].
    pub keep_samples: bool,
}

impl StochasticSpec {
    pub fn new(dt: f64, t_end: f64) -> Self {
        StochasticSpec {
            dt,
            t_end,
            burn_in: 0.0,
            sample_every: 1,
            trace_every: 1,
            keep_samples: false,
        }
    }

    fn validate(&self) -> Result<()> {
        IntegratorSpec {
            scheme: Scheme::Euler,
            dt: self.dt,
            t_end: self.t_end,
            sample_stride: self.trace_every,
        }
        .validate()?;
        if self.sample_every == 0 {
            return Err(Error::invalid("sample_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// Pooled statistics of the real coordinates of sampled states.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoordinateStats {
    /// Number of sampled states.
    pub samples: usize,
    /// Real coordinates per state.
    pub coordinates: usize,
    /// Mean of each real coordinate, pooled.
    pub mean: f64,
    /// Mean of each squared real coordinate, pooled.
    pub second_moment: f64,
    /// Lag-one autocorrelation of the squared coordinates between samples.
    pub lag1_autocorrelation: f64,
    /// `samples * coordinates * (1 - r) / (1 + r)` with r the lag-one
    /// autocorrelation (AR(1) approximation).
    pub effective_samples: f64,
}

#[derive(Default)]
struct StatsAccumulator {
    samples: usize,
    coordinates: usize,
    sum: f64,
    sum_sq: f64,
    sum_q: f64,
    sum_q2: f64,
    sum_lag: f64,
    lag_pairs: usize,
    prev: Vec<f64>,
}

impl StatsAccumulator {
    fn push<T: Scalar>(&mut self, w: &Chain<T>) {
        let coords = linalg::pack(w.layers());
        let q: Vec<f64> = coords.iter().map(|x| x * x).collect();
        self.coordinates = coords.len();
        self.sum += coords.iter().sum::<f64>();
        self.sum_sq += q.iter().sum::<f64>();
        self.sum_q += q.iter().sum::<f64>();
        self.sum_q2 += q.iter().map(|v| v * v).sum::<f64>();
        if !self.prev.is_empty() {
            self.sum_lag += q.iter().zip(&self.prev).map(|(a, b)| a * b).sum::<f64>();
            self.lag_pairs += q.len();
        }
        self.prev = q;
        self.samples += 1;
    }

    fn finish(&self) -> CoordinateStats {
        let n = (self.samples * self.coordinates) as f64;
        if n == 0.0 {
            return CoordinateStats::default();
        }
        let mean = self.sum / n;
        let second_moment = self.sum_sq / n;
        let mq = self.sum_q / n;
        let var_q = self.sum_q2 / n - mq * mq;
        let r = if self.lag_pairs > 0 && var_q > 0.0 {
            ((self.sum_lag / self.lag_pairs as f64 - mq * mq) / var_q).clamp(-0.99, 0.99)
        } else {
            0.0
        };
        CoordinateStats {
            samples: self.samples,
            coordinates: self.coordinates,
            mean,
            second_moment,
            lag1_autocorrelation: r,
            effective_samples: n * (1.0 - r) / (1.0 + r),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StochasticRun<T: Scalar> {
    pub trace: FlowTrace,
    pub final_chain: Chain<T>,
    pub seed: u64,
    pub stats: CoordinateStats,
    /// Accumulated states when `keep_samples` is set.
    pub samples: Vec<Chain<T>>,
}

#[inline]
fn em_update<T: Scalar>(x: &mut T, drift: T, dt: T, sigma: T, noise: T) {
    *x = *x + dt * drift + sigma * noise;
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::invalid("kappa", format!("must be positive, got {kappa}")));
    }
    Ok(())
}

/// Euler-Maruyama for `dw = (-kappa w - F(w)) dt + sqrt(2/beta) dB` where
/// `force` returns `F(w)` or `None` for `F = 0`.
fn run_em<T, F>(
    w0: &Chain<T>,
    kappa: f64,
    beta: f64,
    spec: &StochasticSpec,
    seed: u64,
    diag: &Diagnostics<'_, T>,
    mut force: F,
) -> Result<StochasticRun<T>>
where
    T: Scalar,
    F: FnMut(&Chain<T>) -> Option<Chain<T>>,
{
    check_kappa(kappa)?;
    spec.validate()?;
    if !(beta > 0.0) {
        return Err(Error::invalid("beta", format!("must be positive, got {beta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = T::from_real(spec.dt);
    let sigma = T::from_real((2.0 * spec.dt / beta).sqrt());
    let minus_kappa = T::from_real(-kappa);
    let steps = (spec.t_end / spec.dt - 1e-9).ceil().max(0.0) as usize;
    let burn_steps = (spec.burn_in / spec.dt - 1e-9).ceil().max(0.0) as usize;
    let n = w0.depth();
    let mut w = w0.clone();
    let mut samples = vec![diag.sample(0.0, &w)];
    let mut acc = StatsAccumulator::default();
    let mut kept = Vec::new();
    for i in 0..steps {
        let f = force(&w);
        for k in (1..=n).rev() {
            let fk = f.as_ref().map(|f| f.layer(k).clone());
            for (j, x) in w.layer_mut(k).iter_mut().enumerate() {
                let mut drift = *x * minus_kappa;
                if let Some(fk) = &fk {
                    drift -= fk[j];
                }
                em_update(x, drift, dt, sigma, T::coordinate_noise(&mut rng));
            }
        }
        if !w.is_finite() {
            return Err(Error::RankCollapse {
                t: (i + 1) as f64 * spec.dt,
                source: Box::new(Error::NonFinite),
            });
        }
        let step = i + 1;
        if step % spec.trace_every == 0 || step == steps {
            samples.push(diag.sample(step as f64 * spec.dt, &w));
        }
        if step > burn_steps && (step - burn_steps).is_multiple_of(spec.sample_every) {
            acc.push(&w);
            if spec.keep_samples {
                kept.push(w.clone());
            }
        }
    }
    Ok(StochasticRun {
        trace: FlowTrace {
            depth: n,
            samples,
            seed: Some(seed),
        },
        final_chain: w,
        seed,
        stats: acc.finish(),
        samples: kept,
    })
}

/// Ornstein-Uhlenbeck background noise, `dw = -kappa w dt + sqrt(2/beta) dB`.
///
/// Every real coordinate receives independent noise, so the stationary
/// second moment per real coordinate is `1 / (beta kappa)`. `beta = inf`
/// switches the noise off.
pub fn ou_noise<T: Scalar>(w0: &Chain<T>, kappa: f64, beta: f64, spec: &StochasticSpec, seed: u64) -> Result<StochasticRun<T>> {
    let diag = Diagnostics {
        x0: end_to_end(w0),
        g0: moments(w0),
        loss: None,
        ness: false,
    };
    run_em(w0, kappa, beta, spec, seed, &diag, |_| None)
}

/// Langevin training dynamics,
/// `dw = -(grad_w E(X(w)) + kappa w) dt + sqrt(2/beta) dB`.
///
/// With `E = 0` and the same seed this reproduces [`ou_noise`] bit for bit.
pub fn langevin_flow<T: Scalar>(
    w0: &Chain<T>,
    loss: &LossSpec<T>,
    kappa: f64,
    beta: f64,
    spec: &StochasticSpec,
    seed: u64,
) -> Result<StochasticRun<T>> {
    let diag = Diagnostics {
        x0: end_to_end(w0),
        g0: moments(w0),
        loss: Some(loss),
        ness: false,
    };
    run_em(w0, kappa, beta, spec, seed, &diag, |w| (!loss.is_zero).then(|| loss_gradient(w, loss)))
}
