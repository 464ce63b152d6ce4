//! Dense linear-algebra kernel shared by every other module.
//!
//! Conventions fixed here and relied on everywhere else:
//!
//! * the inner product on matrices is `<A, B> = Re Tr(A* B)`, which is the
//!   Euclidean dot product of the packed real coordinates (see [`pack`]);
//! * singular values are returned sorted in non-increasing order with
//!   `A = U diag(sigma) V*`;
//! * random matrices draw i.i.d. standard Gaussian entries from an explicit
//!   RNG; there is no global generator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Mat<T> = DMatrix<T>;

/// Relative threshold below which a square matrix counts as rank deficient.
pub const FULL_RANK_RTOL: f64 = 1e-12;

/// `Re Tr(A* B)`.
pub fn inner<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x.conjugate() * *y).real())
        .sum()
}

/// Squared Frobenius norm.
pub fn fro_sq<T: Scalar>(a: &Mat<T>) -> f64 {
    a.iter().map(|x| x.modulus_squared()).sum()
}

pub fn fro<T: Scalar>(a: &Mat<T>) -> f64 {
    fro_sq(a).sqrt()
}

pub fn trace<T: Scalar>(a: &Mat<T>) -> T {
    a.trace()
}

/// `(A + A*) / 2`.
pub fn hermitian_part<T: Scalar>(a: &Mat<T>) -> Mat<T> {
    let half = T::from_real(0.5);
    (a + a.adjoint()) * half
}

pub(crate) fn require_square<T: Scalar>(a: &Mat<T>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::NonSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
}

/// Singular value decomposition `A = U diag(sigma) V*` of a square matrix.
#[derive(Debug, Clone)]
pub struct Svd<T: Scalar> {
    pub u: Mat<T>,
    pub sigma: Vec<f64>,
    pub v: Mat<T>,
}

impl<T: Scalar> Svd<T> {
    pub fn reconstruct(&self) -> Mat<T> {
        let d = self.sigma.len();
        let mut us = self.u.clone();
        for j in 0..d {
            let s = T::from_real(self.sigma[j]);
            for i in 0..d {
                us[(i, j)] *= s;
            }
        }
        us * self.v.adjoint()
    }
}

/// Golub-Kahan SVD (via nalgebra) with singular values sorted descending.
pub fn svd<T: Scalar>(a: &Mat<T>) -> Result<Svd<T>> {
    let d = require_square(a)?;
    let mut dec = a.clone().svd(true, true);
    dec.sort_by_singular_values();
    let u = dec.u.expect("u requested");
    let v = dec.v_t.expect("v requested").adjoint();
    let sigma = (0..d).map(|i| dec.singular_values[i]).collect();
    Ok(Svd { u, sigma, v })
}

/// Singular values of an arbitrary (possibly rectangular) matrix, descending.
pub fn singular_values<T: Scalar>(a: &Mat<T>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Fails unless `sigma_min > rtol * sigma_max`. Returns `(sigma_min, sigma_max)`.
pub fn check_full_rank<T: Scalar>(a: &Mat<T>, rtol: f64) -> Result<(f64, f64)> {
    require_square(a)?;
    let s = singular_values(a);
    let (smax, smin) = (s[0], s[s.len() - 1]);
    if !(smin > rtol * smax) {
        return Err(Error::RankDeficient {
            sigma_min: smin,
            sigma_max: smax,
        });
    }
    Ok((smin, smax))
}

/// d x d matrix with i.i.d. standard Gaussian entries.
pub fn random_matrix<T: Scalar, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Mat<T> {
    random_rect(d, d, rng)
}

pub fn random_rect<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat<T> {
    // Row-major draw order so seeded output does not depend on storage order.
    let mut m = Mat::<T>::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = T::gaussian(rng);
        }
    }
    m
}

/// Haar-distributed unitary (orthogonal in the real case): QR of a Gaussian
/// matrix with the phases of diag(R) absorbed into Q.
pub fn random_unitary<T: Scalar, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Mat<T> {
    let g: Mat<T> = random_matrix(d, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let rjj = r[(j, j)];
        let m = rjj.modulus();
        if m > 0.0 {
            let phase = rjj.unscale(m);
            for i in 0..d {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}

/// `||U* U - I||_F`.
pub fn unitarity_defect<T: Scalar>(u: &Mat<T>) -> f64 {
    let d = u.nrows();
    fro(&(u.adjoint() * u - Mat::<T>::identity(d, d)))
}

/// Flatten a sequence of matrices into real coordinates (row-major within
/// each matrix, real part before imaginary part).
pub fn pack<T: Scalar>(mats: &[Mat<T>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(mats.iter().map(|m| m.len()).sum::<usize>() * T::FIELD.real_dim());
    for m in mats {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                m[(i, j)].push_reals(&mut out);
            }
        }
    }
    out
}

/// Inverse of [`pack`] for `count` square d x d matrices.
pub fn unpack<T: Scalar>(x: &[f64], count: usize, d: usize) -> Vec<Mat<T>> {
    let mut rest = x;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut m = Mat::<T>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let (v, r) = T::take_reals(rest);
                m[(i, j)] = v;
                rest = r;
            }
        }
        out.push(m);
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Which algorithm [`solve_spd`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpdMethod {
    /// Assemble the operator column by column and factor it (Cholesky).
    #[default]
    Dense,
    /// Matrix-free conjugate gradient.
    ConjugateGradient,
}

#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub x: Vec<f64>,
    /// `||apply(x) - rhs||`.
    pub residual: f64,
    pub iterations: usize,
    /// 2-norm condition number of the assembled operator (dense path only,
    /// when requested).
    pub condition: Option<f64>,
}

/// Solve `apply(x) = rhs` for a self-adjoint positive definite operator on
/// `R^m`, `m = rhs.len()`.
pub fn solve_spd<F>(apply: F, rhs: &[f64], method: SpdMethod) -> Result<SpdSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    match method {
        SpdMethod::Dense => solve_spd_dense(apply, rhs, false),
        SpdMethod::ConjugateGradient => solve_spd_cg(apply, rhs, 1e-13, 20 * rhs.len().max(1)),
    }
}

/// Materialise the operator by applying it to the standard basis.
pub fn assemble<F>(apply: F, m: usize) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut e = vec![0.0; m];
    for j in 0..m {
        e[j] = 1.0;
        let col = apply(&e);
        for i in 0..m {
            a[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    a
}

pub fn solve_spd_dense<F>(apply: F, rhs: &[f64], with_condition: bool) -> Result<SpdSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = rhs.len();
    let mut a = assemble(&apply, m);
    // Round-off makes the assembled matrix slightly asymmetric.
    let at = a.transpose();
    a = (a + at) * 0.5;

    let condition = if with_condition {
        let eig = SymmetricEigen::new(a.clone());
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        if lo <= 0.0 {
            return Err(Error::NotPositiveDefinite { curvature: lo });
        }
        Some(hi / lo)
    } else {
        None
    };

    let chol = match a.clone().cholesky() {
        Some(c) => c,
        None => {
            let lo = SymmetricEigen::new(a).eigenvalues.min();
            return Err(Error::NotPositiveDefinite { curvature: lo });
        }
    };
    let x: Vec<f64> = chol.solve(&DVector::from_column_slice(rhs)).iter().copied().collect();
    let ax = apply(&x);
    let residual = norm2(&ax.iter().zip(rhs).map(|(p, q)| p - q).collect::<Vec<_>>());
    Ok(SpdSolution {
        x,
        residual,
        iterations: m,
        condition,
    })
}

/// Conjugate gradient from a zero initial guess. Stops when the recursive
/// residual drops below `rtol * ||rhs||`; a non-positive curvature `p.Ap`
/// is reported as [`Error::NotPositiveDefinite`].
pub fn solve_spd_cg<F>(apply: F, rhs: &[f64], rtol: f64, max_iter: usize) -> Result<SpdSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = rhs.len();
    let bnorm = norm2(rhs);
    let mut x = vec![0.0; m];
    if bnorm == 0.0 {
        return Ok(SpdSolution {
            x,
            residual: 0.0,
            iterations: 0,
            condition: None,
        });
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        let pp = dot(&p, &p);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite {
                curvature: pap / pp,
            });
        }
        let alpha = rs / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        if rs_new.sqrt() <= rtol * bnorm {
            break;
        }
        let beta = rs_new / rs;
        for i in 0..m {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    let ax = apply(&x);
    let residual = norm2(&ax.iter().zip(rhs).map(|(p, q)| p - q).collect::<Vec<_>>());
    if residual > 1e3 * rtol * bnorm {
        return Err(Error::NoConvergence {
            iterations,
            residual,
        });
    }
    Ok(SpdSolution {
        x,
        residual,
        iterations,
        condition: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m2(a: [[f64; 2]; 2]) -> Mat<f64> {
        Mat::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]])
    }

    #[test]
    fn svd_identity_and_diagonal() {
        let s = svd(&Mat::<f64>::identity(2, 2)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0]);
        assert!(fro(&(s.reconstruct() - Mat::identity(2, 2))) < 1e-14);

        let s = svd(&m2([[3.0, 0.0], [0.0, 1.0]])).unwrap();
        assert!((s.sigma[0] - 3.0).abs() < 1e-14 && (s.sigma[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_antidiagonal() {
        // A*A = diag(1, 4): singular values 2, 1.
        let a = m2([[0.0, 2.0], [1.0, 0.0]]);
        let s = svd(&a).unwrap();
        assert!((s.sigma[0] - 2.0).abs() < 1e-14);
        assert!((s.sigma[1] - 1.0).abs() < 1e-14);
        assert!(fro(&(s.reconstruct() - &a)) <= 1e-10 * fro(&a));
    }

    #[test]
    fn svd_rejects_rectangular() {
        let a = Mat::<f64>::zeros(2, 3);
        assert!(matches!(svd(&a), Err(Error::NonSquare { rows: 2, cols: 3 })));
    }

    #[test]
    fn svd_contract_random_complex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..=6 {
            let a: Mat<Complex64> = random_matrix(d, &mut rng);
            let s = svd(&a).unwrap();
            assert!(unitarity_defect(&s.u) <= 1e-10);
            assert!(unitarity_defect(&s.v) <= 1e-10);
            assert!(fro(&(s.reconstruct() - &a)) <= 1e-10 * fro(&a));
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn spd_trivial_systems() {
        for method in [SpdMethod::Dense, SpdMethod::ConjugateGradient] {
            let x = solve_spd(|v| v.iter().map(|x| 2.0 * x).collect(), &[4.0, 6.0], method).unwrap();
            assert!((x.x[0] - 2.0).abs() < 1e-12 && (x.x[1] - 3.0).abs() < 1e-12);
            let x = solve_spd(|v| vec![v[0], 5.0 * v[1]], &[1.0, 5.0], method).unwrap();
            assert!((x.x[0] - 1.0).abs() < 1e-12 && (x.x[1] - 1.0).abs() < 1e-12);
        }
    }

    fn random_spd(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g: Mat<f64> = random_matrix(m, rng);
        &g * g.transpose() + DMatrix::identity(m, m) * (m as f64 * 0.1)
    }

    #[test]
    fn spd_random_matches_lu_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_spd(6, &mut rng);
        let b: Vec<f64> = (0..6).map(|i| (i as f64).sin() + 0.5).collect();
        let oracle = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for method in [SpdMethod::Dense, SpdMethod::ConjugateGradient] {
            let sol = solve_spd(|v| (&a * DVector::from_column_slice(v)).iter().copied().collect(), &b, method).unwrap();
            assert!(sol.residual <= 1e-10 * norm2(&b));
            for i in 0..6 {
                assert!((sol.x[i] - oracle[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn cg_and_dense_agree_up_to_dimension_200() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for m in [1, 17, 64, 200] {
            let a = random_spd(m, &mut rng);
            let b: Vec<f64> = (0..m).map(|_| f64::gaussian(&mut rng)).collect();
            let op = |v: &[f64]| (&a * DVector::from_column_slice(v)).iter().copied().collect();
            let dense = solve_spd(op, &b, SpdMethod::Dense).unwrap();
            let cg = solve_spd(op, &b, SpdMethod::ConjugateGradient).unwrap();
            let gap = dense.x.iter().zip(&cg.x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(gap < 1e-8, "m = {m}: gap {gap:e}");
        }
    }

    #[test]
    fn indefinite_operator_is_reported() {
        let op = |v: &[f64]| vec![v[0], -v[1]];
        match solve_spd(op, &[1.0, 1.0], SpdMethod::Dense) {
            Err(Error::NotPositiveDefinite { curvature }) => assert!((curvature + 1.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            solve_spd(op, &[1.0, 1.0], SpdMethod::ConjugateGradient),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn random_matrix_is_reproducible() {
        let a: Mat<f64> = random_matrix(2, &mut ChaCha8Rng::seed_from_u64(42));
        let b: Mat<f64> = random_matrix(2, &mut ChaCha8Rng::seed_from_u64(42));
        let bits = |m: &Mat<f64>| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn random_matrix_moments() {
        // Monte Carlo oracle: 10^4 draws of a 1x1 matrix.
        for complex in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let n = 10_000;
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..n {
                let (re, abs2) = if complex {
                    let m: Mat<Complex64> = random_matrix(1, &mut rng);
                    (m[(0, 0)].re, m[(0, 0)].norm_sqr())
                } else {
                    let m: Mat<f64> = random_matrix(1, &mut rng);
                    (m[(0, 0)], m[(0, 0)] * m[(0, 0)])
                };
                sum += re;
                sum_sq += abs2;
            }
            let mean = sum / n as f64;
            let var = sum_sq / n as f64;
            assert!(mean.abs() < 0.05, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "variance {var}");
        }
    }

    #[test]
    fn trace_is_cyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Mat<Complex64> = random_matrix(4, &mut rng);
        let b: Mat<Complex64> = random_matrix(4, &mut rng);
        let c: Mat<Complex64> = random_matrix(4, &mut rng);
        let t1 = trace(&(&a * &b * &c));
        let t2 = trace(&(&b * &c * &a));
        assert!((t1 - t2).norm() < 1e-12 * (1.0 + t1.norm()));
    }

    #[test]
    fn pack_roundtrip_and_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Mat<Complex64> = random_matrix(3, &mut rng);
        let b: Mat<Complex64> = random_matrix(3, &mut rng);
        let pa = pack(std::slice::from_ref(&a));
        let pb = pack(std::slice::from_ref(&b));
        assert!((dot(&pa, &pb) - inner(&a, &b)).abs() < 1e-12);
        assert_eq!(unpack::<Complex64>(&pa, 1, 3)[0], a);
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q: Mat<Complex64> = random_unitary(5, &mut rng);
        assert!(unitarity_defect(&q) < 1e-12);
        let q: Mat<f64> = random_unitary(5, &mut rng);
        assert!(unitarity_defect(&q) < 1e-12);
    }
}
