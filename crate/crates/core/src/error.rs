use thiserror::Error;

/// Errors produced by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is rank deficient: sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e}")]
    RankDeficient { sigma_min: f64, sigma_max: f64 },

    #[error("factor {index} is numerically singular (sigma_min = {sigma_min:e})")]
    NearSingular { index: usize, sigma_min: f64 },

    #[error("factor {index} is not unitary (defect {defect:e})")]
    NotUnitary { index: usize, defect: f64 },

    #[error("Schatten exponent must lie in (1, inf), got {0}")]
    InvalidExponent(f64),

    #[error("operator is not positive definite (smallest curvature {curvature:e})")]
    NotPositiveDefinite { curvature: f64 },

    #[error("conjugate gradient did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("z = {re}+{im}i lies on the spectrum of A (sigma_min(zI - A) = {sigma_min:e})")]
    Pole { re: f64, im: f64, sigma_min: f64 },

    #[error("loss gradient fails finite-difference check (relative error {rel_err:e})")]
    LossGradientCheck { rel_err: f64 },

    #[error("rank collapse at t = {t}: {source}")]
    RankCollapse { t: f64, source: Box<Error> },

    #[error("line search failed at iteration {iteration}")]
    LineSearchFailed { iteration: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state became non-finite")]
    NonFinite,

    #[error("malformed input: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
