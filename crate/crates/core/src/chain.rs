//! Chains of layer matrices and the basic maps defined on them.
//!
//! A chain `(W_N, ..., W_1)` is stored leftmost-first, so `layers()[0]` is
//! `W_N` and the end-to-end map is the plain left-to-right product. All
//! tuples indexed by `k = 1..N-1` (moments, group elements, Lie-algebra
//! coordinates) follow the same leftmost-first storage; use the `get(k)`
//! accessors rather than raw indices.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, check_full_rank, fro, fro_sq, hermitian_part, singular_values, Mat, FULL_RANK_RTOL};
use crate::scalar::Scalar;

/// Smallest singular value a group factor may have.
pub const GROUP_SIGMA_MIN: f64 = 1e-12;
/// Largest `||U*U - I||_F` accepted for a unitary factor.
pub const UNITARY_TOL: f64 = 1e-10;

/// Position of tuple index `k` (1-based, `k <= len`) in leftmost-first storage.
#[inline]
fn slot(len: usize, k: usize) -> usize {
    assert!(k >= 1 && k <= len, "index {k} outside 1..={len}");
    len - k
}

/// The network parameters `(W_N, ..., W_1)`, each a d x d matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain<T: Scalar> {
    layers: Vec<Mat<T>>,
}

impl<T: Scalar> Chain<T> {
    /// Build a chain from its layers, leftmost (`W_N`) first.
    pub fn new(layers: Vec<Mat<T>>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::invalid("N", format!("depth must be at least 2, got {}", layers.len())));
        }
        let d = layers[0].nrows();
        if d == 0 {
            return Err(Error::invalid("d", "width must be at least 1"));
        }
        for (i, w) in layers.iter().enumerate() {
            if w.nrows() != d || w.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} is {}x{}, expected {d}x{d}",
                    layers.len() - i,
                    w.nrows(),
                    w.ncols()
                )));
            }
        }
        Ok(Chain { layers })
    }

    /// Scalar (d = 1) chain from its entries, `W_N` first.
    pub fn scalars(values: &[T]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Mat::from_element(1, 1, v)).collect())
    }

    pub fn identity(depth: usize, d: usize) -> Result<Self> {
        Self::new(vec![Mat::identity(d, d); depth])
    }

    pub fn zeros(depth: usize, d: usize) -> Result<Self> {
        Self::new(vec![Mat::zeros(d, d); depth])
    }

    /// Chain with i.i.d. standard Gaussian layers, drawn `W_N` first.
    pub fn random<R: Rng + ?Sized>(depth: usize, d: usize, rng: &mut R) -> Result<Self> {
        Self::new((0..depth).map(|_| linalg::random_matrix(d, rng)).collect())
    }

    /// Depth N.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Width d.
    pub fn width(&self) -> usize {
        self.layers[0].nrows()
    }

    /// `W_k`, `k = 1..=N`.
    pub fn layer(&self, k: usize) -> &Mat<T> {
        &self.layers[slot(self.depth(), k)]
    }

    pub fn layer_mut(&mut self, k: usize) -> &mut Mat<T> {
        let n = self.depth();
        &mut self.layers[slot(n, k)]
    }

    /// Layers leftmost first: `[W_N, ..., W_1]`.
    pub fn layers(&self) -> &[Mat<T>] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Mat<T>> {
        self.layers
    }

    pub(crate) fn same_shape(&self, other: &Self) -> Result<()> {
        if self.depth() != other.depth() || self.width() != other.width() {
            return Err(Error::DimensionMismatch(format!(
                "chain shapes differ: (N={}, d={}) vs (N={}, d={})",
                self.depth(),
                self.width(),
                other.depth(),
                other.width()
            )));
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        let a = T::from_real(alpha);
        for (w, v) in self.layers.iter_mut().zip(&other.layers) {
            *w += v * a;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let a = T::from_real(alpha);
        Chain {
            layers: self.layers.iter().map(|w| w * a).collect(),
        }
    }

    /// Ambient inner product `sum_k Re Tr(W_k* V_k)`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.layers.iter().zip(&other.layers).map(|(a, b)| linalg::inner(a, b)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|w| w.iter().all(|x| x.real().is_finite() && x.imaginary().is_finite()))
    }

    /// Fails with [`Error::RankDeficient`] unless every layer has
    /// `sigma_min > 1e-12 * sigma_max`.
    pub fn check_full_rank(&self) -> Result<()> {
        for w in &self.layers {
            check_full_rank(w, FULL_RANK_RTOL)?;
        }
        Ok(())
    }
}

/// The moments `(G_{N-1}, ..., G_1)`, `G_k = W_k W_k* - W_{k+1}* W_{k+1}`.
///
/// The moment map proper is `2G`; this type stores `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T: Scalar> {
    g: Vec<Mat<T>>,
}

impl<T: Scalar> Moments<T> {
    /// Wrap `(G_{N-1}, ..., G_1)`, symmetrizing each entry.
    pub fn new(g: Vec<Mat<T>>) -> Self {
        Moments {
            g: g.iter().map(hermitian_part).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// `G_k`, `k = 1..=N-1`.
    pub fn get(&self, k: usize) -> &Mat<T> {
        &self.g[slot(self.g.len(), k)]
    }

    /// `[G_{N-1}, ..., G_1]`.
    pub fn as_slice(&self) -> &[Mat<T>] {
        &self.g
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `||G||_2^2 = sum_k Tr(G_k^2)`.
    pub fn norm_sq(&self) -> f64 {
        self.g.iter().map(fro_sq).sum()
    }

    /// `[||G_1||_F, ..., ||G_{N-1}||_F]` (ascending k).
    pub fn component_norms(&self) -> Vec<f64> {
        self.g.iter().rev().map(fro).collect()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.g.iter().zip(&other.g).map(|(a, b)| fro_sq(&(a - b))).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let a = T::from_real(alpha);
        Moments {
            g: self.g.iter().map(|m| m * a).collect(),
        }
    }
}

/// `(A_{N-1}, ..., A_1)` in `GL_d^{N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement<T: Scalar> {
    factors: Vec<Mat<T>>,
}

impl<T: Scalar> GroupElement<T> {
    /// Factors leftmost first, `A_{N-1}` at index 0.
    pub fn new(factors: Vec<Mat<T>>) -> Self {
        GroupElement { factors }
    }

    pub fn identity(depth: usize, d: usize) -> Self {
        GroupElement {
            factors: vec![Mat::identity(d, d); depth - 1],
        }
    }

    /// `A_k`, `k = 1..=N-1`.
    pub fn get(&self, k: usize) -> &Mat<T> {
        &self.factors[slot(self.factors.len(), k)]
    }

    pub fn factors(&self) -> &[Mat<T>] {
        &self.factors
    }

    pub fn into_factors(self) -> Vec<Mat<T>> {
        self.factors
    }

    /// Inverses `A_k^{-1}` in storage order; fails if some factor has
    /// `sigma_min <= 1e-12`.
    fn inverses(&self, sigma_min: f64) -> Result<Vec<Mat<T>>> {
        let len = self.factors.len();
        self.factors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let smin = *singular_values(a).last().unwrap_or(&0.0);
                if !(smin > sigma_min) {
                    return Err(Error::NearSingular {
                        index: len - i,
                        sigma_min: smin,
                    });
                }
                a.clone().try_inverse().ok_or(Error::NearSingular {
                    index: len - i,
                    sigma_min: smin,
                })
            })
            .collect()
    }

    /// Largest unitarity defect over the factors.
    pub fn max_unitarity_defect(&self) -> f64 {
        self.factors.iter().map(linalg::unitarity_defect).fold(0.0, f64::max)
    }
}

/// `(U_{N-1}, ..., U_1)` in `U_d^{N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryElement<T: Scalar> {
    factors: Vec<Mat<T>>,
}

impl<T: Scalar> UnitaryElement<T> {
    /// Fails with [`Error::NotUnitary`] when some `||U_k* U_k - I||_F > 1e-10`.
    pub fn new(factors: Vec<Mat<T>>) -> Result<Self> {
        let len = factors.len();
        for (i, u) in factors.iter().enumerate() {
            let defect = linalg::unitarity_defect(u);
            if !(defect <= UNITARY_TOL) {
                return Err(Error::NotUnitary { index: len - i, defect });
            }
        }
        Ok(UnitaryElement { factors })
    }

    pub fn identity(depth: usize, d: usize) -> Self {
        UnitaryElement {
            factors: vec![Mat::identity(d, d); depth - 1],
        }
    }

    pub fn random<R: Rng + ?Sized>(depth: usize, d: usize, rng: &mut R) -> Self {
        UnitaryElement {
            factors: (1..depth).map(|_| linalg::random_unitary(d, rng)).collect(),
        }
    }

    pub fn get(&self, k: usize) -> &Mat<T> {
        &self.factors[slot(self.factors.len(), k)]
    }
}

/// `X = W_N W_{N-1} ... W_1`.
pub fn end_to_end<T: Scalar>(w: &Chain<T>) -> Mat<T> {
    let mut x = w.layers[0].clone();
    for layer in &w.layers[1..] {
        x *= layer;
    }
    x
}

pub fn moments<T: Scalar>(w: &Chain<T>) -> Moments<T> {
    let n = w.depth();
    let g = (1..n)
        .rev()
        .map(|k| {
            let wk = w.layer(k);
            let wk1 = w.layer(k + 1);
            wk * wk.adjoint() - wk1.adjoint() * wk1
        })
        .collect();
    Moments::new(g)
}

/// `( sum_k ||W_{k+1}* W_{k+1} - W_k W_k*||_F^2 )^{1/2}`.
pub fn balancedness_residual<T: Scalar>(w: &Chain<T>) -> f64 {
    moments(w).norm()
}

/// `||end_to_end(w) - X||_F`.
pub fn fiber_residual<T: Scalar>(w: &Chain<T>, x: &Mat<T>) -> Result<f64> {
    if x.nrows() != w.width() || x.ncols() != w.width() {
        return Err(Error::DimensionMismatch(format!(
            "target is {}x{}, chain width is {}",
            x.nrows(),
            x.ncols(),
            w.width()
        )));
    }
    Ok(fro(&(end_to_end(w) - x)))
}

/// `||w||_2^2 = sum_k Tr(W_k* W_k)`.
pub fn ridge_norm_sq<T: Scalar>(w: &Chain<T>) -> f64 {
    w.layers.iter().map(fro_sq).sum()
}

/// Schatten p-norm of one matrix, `(sum_i sigma_i^p)^{1/p}`.
pub fn schatten_p<T: Scalar>(a: &Mat<T>, p: f64) -> f64 {
    singular_values(a).iter().map(|s| s.powf(p)).sum::<f64>().powf(1.0 / p)
}

pub(crate) fn check_exponent(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidExponent(p));
    }
    Ok(())
}

/// `sum_k ||W_k||_p` for `1 < p < inf`.
pub fn schatten_norm<T: Scalar>(w: &Chain<T>, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(w.layers.iter().map(|m| schatten_p(m, p)).sum())
}

/// The balanced point `(Q_N L, L, ..., L, L Q_0*)` of the fiber over `x`,
/// where `x = Q_N S Q_0*` and `L = S^{1/N}`.
pub fn center<T: Scalar>(x: &Mat<T>, depth: usize) -> Result<Chain<T>> {
    if depth < 2 {
        return Err(Error::invalid("N", format!("depth must be at least 2, got {depth}")));
    }
    check_full_rank(x, FULL_RANK_RTOL)?;
    let dec = linalg::svd(x)?;
    let d = x.nrows();
    let root = 1.0 / depth as f64;
    let lambda = Mat::<T>::from_diagonal(&nalgebra::DVector::from_iterator(
        d,
        dec.sigma.iter().map(|s| T::from_real(s.powf(root))),
    ));
    let mut layers = Vec::with_capacity(depth);
    layers.push(&dec.u * &lambda);
    for _ in 1..depth - 1 {
        layers.push(lambda.clone());
    }
    layers.push(&lambda * dec.v.adjoint());
    Chain::new(layers)
}

/// `A . w = (W_N A_{N-1}^{-1}, A_{N-1} W_{N-1} A_{N-2}^{-1}, ..., A_1 W_1)`.
pub fn gl_action<T: Scalar>(a: &GroupElement<T>, w: &Chain<T>) -> Result<Chain<T>> {
    let n = w.depth();
    if a.factors.len() != n - 1 {
        return Err(Error::DimensionMismatch(format!(
            "group element has {} factors, chain depth is {n}",
            a.factors.len()
        )));
    }
    let inv = a.inverses(GROUP_SIGMA_MIN)?;
    let layers = (1..=n)
        .rev()
        .map(|k| {
            let mut m = w.layer(k).clone();
            if k < n {
                m = a.get(k) * m;
            }
            if k > 1 {
                m *= &inv[slot(n - 1, k - 1)];
            }
            m
        })
        .collect();
    Chain::new(layers)
}

/// `U . w = (W_N U_{N-1}*, U_{N-1} W_{N-1} U_{N-2}*, ..., U_1 W_1)`.
pub fn unitary_action<T: Scalar>(u: &UnitaryElement<T>, w: &Chain<T>) -> Result<Chain<T>> {
    let n = w.depth();
    if u.factors.len() != n - 1 {
        return Err(Error::DimensionMismatch(format!(
            "unitary element has {} factors, chain depth is {n}",
            u.factors.len()
        )));
    }
    let layers = (1..=n)
        .rev()
        .map(|k| {
            let mut m = w.layer(k).clone();
            if k < n {
                m = u.get(k) * m;
            }
            if k > 1 {
                m *= u.get(k - 1).adjoint();
            }
            m
        })
        .collect();
    Chain::new(layers)
}

/// Solve layer by layer for the group element `A` with `A . from = to`.
///
/// Both chains must have invertible layers (true on the fiber of a
/// full-rank matrix). Only the top `N-1` layers are used; when `from` and
/// `to` share an end-to-end matrix the bottom layer then agrees too.
pub fn relate_chains<T: Scalar>(from: &Chain<T>, to: &Chain<T>) -> Result<GroupElement<T>> {
    from.same_shape(to)?;
    let n = from.depth();
    let inverse = |k: usize| -> Result<Mat<T>> {
        let w = to.layer(k);
        check_full_rank(w, FULL_RANK_RTOL)?;
        w.clone().try_inverse().ok_or(Error::NearSingular {
            index: k,
            sigma_min: 0.0,
        })
    };
    // to_N = from_N A_{N-1}^{-1}  =>  A_{N-1} = to_N^{-1} from_N
    // to_k = A_k from_k A_{k-1}^{-1}  =>  A_{k-1} = to_k^{-1} A_k from_k
    let mut factors = Vec::with_capacity(n - 1);
    let mut current = inverse(n)? * from.layer(n);
    for k in (2..n).rev() {
        let next = inverse(k)? * &current * from.layer(k);
        factors.push(current);
        current = next;
    }
    factors.push(current);
    Ok(GroupElement::new(factors))
}

/// The element `A` with `A . center(X) = w` for `w` on the fiber over `X`.
pub fn recover_group_element<T: Scalar>(w: &Chain<T>, x: &Mat<T>) -> Result<GroupElement<T>> {
    let c = center(x, w.depth())?;
    relate_chains(&c, w)
}

/// Per-layer singular values and adjacent-layer singular-vector alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    /// `sigma(W_k)` for `k = 1..=N` (ascending k, each list descending).
    pub singular_values: Vec<Vec<f64>>,
    /// For `k = 1..N-1`: distance between the right singular frame of
    /// `W_{k+1}` and the left singular frame of `W_k`, minimised over the
    /// unitary freedom within each block of equal singular values of `W_k`.
    pub alignment_defect: Vec<f64>,
    /// For `k = 1..N-1`: `max_i |sigma_i(W_{k+1}) - sigma_i(W_k)|`.
    pub value_mismatch: Vec<f64>,
}

impl AlignmentReport {
    pub fn max_defect(&self) -> f64 {
        self.alignment_defect.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_value_mismatch(&self) -> f64 {
        self.value_mismatch.iter().copied().fold(0.0, f64::max)
    }
}

/// Relative gap under which singular values are grouped into one block.
const CLUSTER_RTOL: f64 = 1e-6;

pub fn alignment_report<T: Scalar>(w: &Chain<T>) -> Result<AlignmentReport> {
    let n = w.depth();
    let svds = (1..=n).map(|k| linalg::svd(w.layer(k))).collect::<Result<Vec<_>>>()?;
    let singular_values = svds.iter().map(|s| s.sigma.clone()).collect();
    let mut alignment_defect = Vec::with_capacity(n - 1);
    let mut value_mismatch = Vec::with_capacity(n - 1);
    for k in 1..n {
        let lower = &svds[k - 1];
        let upper = &svds[k];
        value_mismatch.push(
            lower
                .sigma
                .iter()
                .zip(&upper.sigma)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        alignment_defect.push(frame_distance(&lower.u, &upper.v, &lower.sigma));
    }
    Ok(AlignmentReport {
        singular_values,
        alignment_defect,
        value_mismatch,
    })
}

/// `min ||V - U Q||_F` over block-diagonal unitary `Q`, blocks given by
/// clusters of `sigma`. Each block is an orthogonal Procrustes problem whose
/// minimizer is the polar factor of `U_c* V_c`; the residual is formed
/// explicitly rather than as `2m - 2 ||U_c* V_c||_*`, which cancels.
fn frame_distance<T: Scalar>(u: &Mat<T>, v: &Mat<T>, sigma: &[f64]) -> f64 {
    let d = sigma.len();
    let scale = sigma.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let mut total = 0.0;
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && (sigma[end - 1] - sigma[end]) <= CLUSTER_RTOL * scale {
            end += 1;
        }
        let m = end - start;
        let uc = u.columns(start, m);
        let vc = v.columns(start, m);
        let cross: Mat<T> = uc.adjoint() * vc;
        let q = match linalg::svd(&cross) {
            Ok(p) => &p.u * p.v.adjoint(),
            Err(_) => return f64::NAN,
        };
        total += linalg::fro_sq(&(vc - uc * q));
        start = end;
    }
    total.sqrt()
}
