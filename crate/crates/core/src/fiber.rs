//! Riemannian geometry of the fiber over a full-rank end-to-end matrix.
//!
//! Tangent vectors at `w` are generated by Lie-algebra coordinates
//! `a = (a_{N-1}, ..., a_1)`:
//!
//! ```text
//! w_a = (-W_N a_{N-1}, a_{N-1} W_{N-1} - W_{N-1} a_{N-2}, ..., a_1 W_1)
//! ```
//!
//! and the metric is the one induced from the ambient Frobenius inner
//! product. The H-operator packages that metric: `<w_b, w_a> =
//! sum_k Re Tr(b_k* H_k(a))`, and `H(c) + H(c)*` is the derivative of the
//! moments along `w_c`.
//!
//! The fiber gradient of `||w||^2` is `w_b` where `b` solves `H(b) = 2G`.
//! `H` is self-adjoint and positive definite on `gl_d^{N-1}` (viewed as a
//! real vector space) whenever every layer is invertible, so the system is
//! solved either by dense Cholesky or by matrix-free conjugate gradient.


use crate::chain::{moments, Chain, Moments};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, SpdMethod, FULL_RANK_RTOL};
use crate::scalar::Scalar;

/// Lie-algebra coordinates `(a_{N-1}, ..., a_1)`, stored leftmost first.
/// The boundary convention `a_0 = a_N = 0` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentCoords<T: Scalar> {
    a: Vec<Mat<T>>,
}

impl<T: Scalar> TangentCoords<T> {
    /// Coordinates from `[a_{N-1}, ..., a_1]`.
    pub fn new(a: Vec<Mat<T>>) -> Self {
        TangentCoords { a }
    }

    pub fn zeros(depth: usize, d: usize) -> Self {
        TangentCoords {
            a: vec![Mat::zeros(d, d); depth - 1],
        }
    }

    pub fn random<R: rand::Rng + ?Sized>(depth: usize, d: usize, rng: &mut R) -> Self {
        TangentCoords {
            a: (1..depth).map(|_| linalg::random_matrix(d, rng)).collect(),
        }
    }

    /// Coordinates equal to the moments, `c = G`.
    pub fn from_moments(g: &Moments<T>) -> Self {
        TangentCoords { a: g.as_slice().to_vec() }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// `a_k` for `k = 1..=N-1`; zero matrices are not materialised for the
    /// boundary indices, use [`Self::get_or_zero`] for those.
    pub fn get(&self, k: usize) -> &Mat<T> {
        &self.a[self.a.len() - k]
    }

    fn get_or_zero(&self, k: usize) -> Option<&Mat<T>> {
        if k == 0 || k > self.a.len() {
            None
        } else {
            Some(self.get(k))
        }
    }

    pub fn as_slice(&self) -> &[Mat<T>] {
        &self.a
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let s = T::from_real(alpha);
        TangentCoords {
            a: self.a.iter().map(|m| m * s).collect(),
        }
    }

    /// `sum_k Re Tr(a_k* b_k)`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.a.iter().zip(&other.a).map(|(x, y)| linalg::inner(x, y)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Largest `||a_k - a_k*||_F`.
    pub fn max_skew(&self) -> f64 {
        self.a.iter().map(|m| linalg::fro(&(m - m.adjoint()))).fold(0.0, f64::max)
    }

    fn pack(&self) -> Vec<f64> {
        linalg::pack(&self.a)
    }

    fn unpack(x: &[f64], count: usize, d: usize) -> Self {
        TangentCoords {
            a: linalg::unpack(x, count, d),
        }
    }
}

/// A tangent vector to the fiber, embedded in `M_d^N` (leftmost first).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<T: Scalar> {
    v: Chain<T>,
}

impl<T: Scalar> TangentVector<T> {
    /// The vector as an element of the ambient space `M_d^N`.
    pub fn ambient(&self) -> &Chain<T> {
        &self.v
    }

    pub fn into_ambient(self) -> Chain<T> {
        self.v
    }

    /// `v_k`, `k = 1..=N`.
    pub fn layer(&self, k: usize) -> &Mat<T> {
        self.v.layer(k)
    }

    pub fn norm_sq(&self) -> f64 {
        self.v.inner(&self.v)
    }
}

fn check_pair<T: Scalar>(w: &Chain<T>, a: &TangentCoords<T>) -> Result<()> {
    if a.len() + 1 != w.depth() || a.a.iter().any(|m| m.nrows() != w.width() || m.ncols() != w.width()) {
        return Err(Error::DimensionMismatch(format!(
            "coordinates ({} matrices) do not match a chain of depth {} and width {}",
            a.len(),
            w.depth(),
            w.width()
        )));
    }
    Ok(())
}

/// `v_N = -W_N a_{N-1}`, `v_k = a_k W_k - W_k a_{k-1}`, `v_1 = a_1 W_1`.
pub fn tangent_from_coords<T: Scalar>(w: &Chain<T>, a: &TangentCoords<T>) -> Result<TangentVector<T>> {
    check_pair(w, a)?;
    Ok(TangentVector {
        v: tangent_unchecked(w, a),
    })
}

fn tangent_unchecked<T: Scalar>(w: &Chain<T>, a: &TangentCoords<T>) -> Chain<T> {
    let n = w.depth();
    let layers = (1..=n)
        .rev()
        .map(|k| {
            let wk = w.layer(k);
            let mut v = match a.get_or_zero(k) {
                Some(ak) => ak * wk,
                None => Mat::zeros(wk.nrows(), wk.ncols()),
            };
            if let Some(prev) = a.get_or_zero(k - 1) {
                v -= wk * prev;
            }
            v
        })
        .collect();
    Chain::new(layers).expect("shape checked")
}

/// Inverse of [`tangent_from_coords`] on its image: solves for `a` from the
/// bottom layer up, `a_1 = v_1 W_1^{-1}`, `a_k = (v_k + W_k a_{k-1}) W_k^{-1}`.
/// The top layer is not used; for `v` in the tangent space it is then
/// reproduced automatically. Requires invertible layers `W_1..W_{N-1}`.
pub fn coords_from_tangent<T: Scalar>(w: &Chain<T>, v: &Chain<T>) -> Result<TangentCoords<T>> {
    w.same_shape(v)?;
    let n = w.depth();
    let d = w.width();
    let mut out = Vec::with_capacity(n - 1);
    let mut prev = Mat::<T>::zeros(d, d);
    for k in 1..n {
        let wk = w.layer(k);
        let (smin, _) = linalg::check_full_rank(wk, FULL_RANK_RTOL)?;
        let inv = wk.clone().try_inverse().ok_or(Error::NearSingular { index: k, sigma_min: smin })?;
        let ak = (v.layer(k) + wk * &prev) * inv;
        out.push(ak.clone());
        prev = ak;
    }
    out.reverse();
    Ok(TangentCoords::new(out))
}

/// The induced metric `<w_a, w_b>`, evaluated from the expanded trace
/// formula (not via the ambient vectors).
pub fn fiber_metric<T: Scalar>(w: &Chain<T>, a: &TangentCoords<T>, b: &TangentCoords<T>) -> Result<f64> {
    check_pair(w, a)?;
    check_pair(w, b)?;
    let n = w.depth();
    let wn = w.layer(n);
    let w1 = w.layer(1);
    // Tr(b_{N-1}* W_N* W_N a_{N-1})
    let mut total = (b.get(n - 1).adjoint() * wn.adjoint() * wn * a.get(n - 1)).trace().real();
    // sum_{k=2}^{N-1} Tr((W_k* b_k* - b_{k-1}* W_k*)(a_k W_k - W_k a_{k-1}))
    for k in 2..n {
        let wk = w.layer(k);
        let left = wk.adjoint() * b.get(k).adjoint() - b.get(k - 1).adjoint() * wk.adjoint();
        let right = a.get(k) * wk - wk * a.get(k - 1);
        total += (left * right).trace().real();
    }
    // Tr(W_1 W_1* b_1* a_1)
    total += (w1 * w1.adjoint() * b.get(1).adjoint() * a.get(1)).trace().real();
    Ok(total)
}

/// `H_k(c) = -W_k c_{k-1} W_k* + c_k W_k W_k* + W_{k+1}* W_{k+1} c_k - W_{k+1}* c_{k+1} W_{k+1}`
/// with `c_0 = c_N = 0`. Returned leftmost first, `[H_{N-1}, ..., H_1]`.
pub fn h_operator<T: Scalar>(w: &Chain<T>, c: &TangentCoords<T>) -> Result<Vec<Mat<T>>> {
    check_pair(w, c)?;
    Ok(h_unchecked(w, c))
}

fn h_unchecked<T: Scalar>(w: &Chain<T>, c: &TangentCoords<T>) -> Vec<Mat<T>> {
    // H_k(c) = v_k W_k* - W_{k+1}* v_{k+1} with v = w_c.
    let v = tangent_unchecked(w, c);
    (1..w.depth())
        .rev()
        .map(|k| v.layer(k) * w.layer(k).adjoint() - w.layer(k + 1).adjoint() * v.layer(k + 1))
        .collect()
}

/// Derivative of the moments along `w_c`: `H(c) + H(c)*`.
pub fn moment_pushforward<T: Scalar>(w: &Chain<T>, c: &TangentCoords<T>) -> Result<Moments<T>> {
    let h = h_operator(w, c)?;
    Ok(Moments::new(h.iter().map(|m| m + m.adjoint()).collect()))
}

/// `d||w||^2 (w_a) = sum_k Tr(G_k (a_k + a_k*))`.
pub fn ridge_differential<T: Scalar>(w: &Chain<T>, a: &TangentCoords<T>) -> Result<f64> {
    check_pair(w, a)?;
    let g = moments(w);
    Ok((1..w.depth())
        .map(|k| {
            let ak = a.get(k);
            (g.get(k) * (ak + ak.adjoint())).trace().real()
        })
        .sum())
}

/// Outcome of the gradient-coordinate solve with diagnostics.
#[derive(Debug, Clone)]
pub struct GradientSolve<T: Scalar> {
    pub coords: TangentCoords<T>,
    /// `||H(b) - 2G||`.
    pub residual: f64,
    pub iterations: usize,
    /// Condition number of the assembled operator when requested.
    pub condition: Option<f64>,
}

/// `b` is reported as exactly zero when `||G||_F < SHORT_CIRCUIT * ||w||^2`.
pub const SHORT_CIRCUIT: f64 = 1e-13;

/// Solve `H(b) = 2G` for the coordinates of `grad ||w||^2`.
///
/// Equivalently `H(b) + H(b)* = 4G` together with `H(b)* = H(b)`.
pub fn ridge_gradient_solve<T: Scalar>(
    w: &Chain<T>,
    method: SpdMethod,
    with_condition: bool,
) -> Result<GradientSolve<T>> {
    w.check_full_rank()?;
    let n = w.depth();
    let d = w.width();
    let g = moments(w);
    let scale = crate::chain::ridge_norm_sq(w);
    if g.norm() < SHORT_CIRCUIT * scale {
        return Ok(GradientSolve {
            coords: TangentCoords::zeros(n, d),
            residual: 0.0,
            iterations: 0,
            condition: None,
        });
    }
    let rhs = TangentCoords::from_moments(&g).scaled(2.0).pack();
    let apply = |x: &[f64]| -> Vec<f64> {
        let c = TangentCoords::unpack(x, n - 1, d);
        linalg::pack(&h_unchecked(w, &c))
    };
    let sol = match (method, with_condition) {
        (SpdMethod::Dense, true) => linalg::solve_spd_dense(apply, &rhs, true)?,
        _ => linalg::solve_spd(apply, &rhs, method)?,
    };
    Ok(GradientSolve {
        coords: TangentCoords::unpack(&sol.x, n - 1, d),
        residual: sol.residual,
        iterations: sol.iterations,
        condition: sol.condition,
    })
}

/// Coordinates `b` with `grad ||w||^2 = w_b` (dense solve).
pub fn ridge_gradient_coords<T: Scalar>(w: &Chain<T>) -> Result<TangentCoords<T>> {
    ridge_gradient_solve(w, SpdMethod::Dense, false).map(|s| s.coords)
}

/// `grad ||w||^2` as a tangent vector.
pub fn ridge_gradient<T: Scalar>(w: &Chain<T>, method: SpdMethod) -> Result<TangentVector<T>> {
    let b = ridge_gradient_solve(w, method, false)?.coords;
    tangent_from_coords(w, &b)
}

/// First-order change of the end-to-end matrix along `v`:
/// `sum_k W_N ... W_{k+1} v_k W_{k-1} ... W_1`.
pub fn end_to_end_derivative<T: Scalar>(w: &Chain<T>, v: &Chain<T>) -> Mat<T> {
    let n = w.depth();
    let d = w.width();
    // prefix[k] = W_N ... W_{k+1}, suffix[k] = W_{k-1} ... W_1
    let mut prefix = vec![Mat::<T>::identity(d, d); n + 2];
    for k in (1..n).rev() {
        prefix[k] = &prefix[k + 1] * w.layer(k + 1);
    }
    let mut suffix = vec![Mat::<T>::identity(d, d); n + 2];
    for k in 2..=n {
        suffix[k] = w.layer(k - 1) * &suffix[k - 1];
    }
    let mut total = Mat::<T>::zeros(d, d);
    for k in 1..=n {
        total += &prefix[k] * v.layer(k) * &suffix[k];
    }
    total
}
