//! Gradient descent over tuples of square matrices with Armijo backtracking,
//! Barzilai-Borwein trial steps and an invertibility guard.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{self, Mat};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentOptions {
    pub max_iter: usize,
    /// Stop once the gradient norm is at or below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Step shrink factor per backtrack.
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Reject trial points where some factor has `sigma_min` below this.
    pub sigma_guard: f64,
    /// Trial points may exceed the current value by this much relative slack
    /// (roundoff), so descent can continue at the noise floor.
    pub value_slack: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions {
            max_iter: 20_000,
            grad_tol: 1e-10,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            sigma_guard: 1e-8,
            value_slack: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DescentOutcome<T: Scalar> {
    pub point: Vec<Mat<T>>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when backtracking exhausted `max_backtracks` before convergence.
    pub line_search_failed: bool,
    /// Objective value after every accepted step, starting with the initial point.
    pub history: Vec<f64>,
}

fn norm_sq<T: Scalar>(x: &[Mat<T>]) -> f64 {
    x.iter().map(linalg::fro_sq).sum()
}

fn inner<T: Scalar>(x: &[Mat<T>], y: &[Mat<T>]) -> f64 {
    x.iter().zip(y).map(|(a, b)| linalg::inner(a, b)).sum()
}

fn guarded<T: Scalar>(x: &[Mat<T>], sigma_guard: f64) -> bool {
    x.iter()
        .all(|m| linalg::singular_values(m).last().is_some_and(|&s| s >= sigma_guard))
}

/// Minimize `f` from `x0`. `f` returns the value and its gradient for the
/// inner product `Re sum Tr(A_i* B_i)`. An error from `f` at a trial point
/// counts as a rejected step; an error at `x0` is returned.
pub fn descend<T, F>(x0: Vec<Mat<T>>, opts: &DescentOptions, mut f: F) -> Result<DescentOutcome<T>>
where
    T: Scalar,
    F: FnMut(&[Mat<T>]) -> Result<(f64, Vec<Mat<T>>)>,
{
    let mut x = x0;
    let (mut value, mut grad) = f(&x)?;
    let mut history = vec![value];
    let mut gnorm = norm_sq(&grad).sqrt();
    let xnorm = norm_sq(&x).sqrt().max(1.0);
    let mut step = if gnorm > 0.0 { 0.1 * xnorm / gnorm } else { 1.0 };
    let mut iterations = 0;
    let mut line_search_failed = false;
    while gnorm > opts.grad_tol && iterations < opts.max_iter {
        let slope = -gnorm * gnorm;
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<Mat<T>> = x
                .iter()
                .zip(&grad)
                .map(|(xi, gi)| xi - gi * T::from_real(alpha))
                .collect();
            if guarded(&trial, opts.sigma_guard) {
                if let Ok((v, g)) = f(&trial) {
                    let bound = value + opts.armijo * alpha * slope + opts.value_slack * value.abs();
                    if v.is_finite() && v <= bound {
                        accepted = Some((trial, v, g));
                        break;
                    }
                }
            }
            alpha *= opts.shrink;
        }
        let Some((trial, v, g)) = accepted else {
            line_search_failed = true;
            break;
        };
        // Barzilai-Borwein length for the next trial step.
        let s: Vec<Mat<T>> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<Mat<T>> = g.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = inner(&s, &y);
        step = if sy > 0.0 { norm_sq(&s) / sy } else { 2.0 * alpha };
        x = trial;
        value = v;
        grad = g;
        gnorm = norm_sq(&grad).sqrt();
        history.push(value);
        iterations += 1;
    }
    Ok(DescentOutcome {
        point: x,
        value,
        grad_norm: gnorm,
        iterations,
        converged: gnorm <= opts.grad_tol,
        line_search_failed,
        history,
    })
}
