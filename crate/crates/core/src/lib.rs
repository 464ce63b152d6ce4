//! Geometry and gradient flows of deep linear networks.
//!
//! A depth-N linear network with d x d layers is a [`Chain`] `(W_N, ..., W_1)`
//! computing the end-to-end matrix `X = W_N ... W_1`. The set of chains with a
//! given full-rank `X` (the fiber) is a `GL_d^{N-1}` orbit; its points of
//! minimum norm are exactly the balanced ones, where every moment
//! `G_k = W_k W_k* - W_{k+1}* W_{k+1}` vanishes.
//!
//! Modules:
//!
//! * [`linalg`]: conventions and dense kernels (SVD, SPD solves, sampling);
//! * [`chain`]: chains, moments, norms, the center of a fiber, group actions;
//! * [`fiber`]: tangent coordinates, induced metric, H-operator, fiber gradient;
//! * [`flows`]: regularizing, Ness, learning and regularized flows, plus the
//!   Ornstein-Uhlenbeck and Langevin models;
//! * [`variational`]: direct minimisation of ridge and Schatten norms over
//!   the fiber and a Kempf-Ness verifier;
//! * [`realization`]: state-space triples and norm-balanced realizations;
//! * [`optim`]: guarded gradient descent shared by the minimizers;
//! * [`io`]: JSON and CSV formats;
//! * [`battery`]: the invariant battery behind `dln verify`.

// `!(x > tol)` style comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod chain;
pub mod error;
pub mod fiber;
pub mod flows;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod realization;
pub mod scalar;
pub mod variational;

pub use chain::{
    alignment_report, balancedness_residual, center, end_to_end, fiber_residual, gl_action, moments,
    recover_group_element, relate_chains, ridge_norm_sq, schatten_norm, unitary_action, AlignmentReport, Chain,
    GroupElement, Moments, UnitaryElement,
};
pub use error::{Error, Result};
pub use fiber::{
    coords_from_tangent, fiber_metric, h_operator, moment_pushforward, ridge_differential, ridge_gradient_coords, tangent_from_coords,
    TangentCoords, TangentVector,
};
pub use linalg::Mat;
pub use num_complex::Complex64;
pub use scalar::{Field, Scalar};
