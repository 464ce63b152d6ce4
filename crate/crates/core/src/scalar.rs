//! Scalar fields: real and complex double precision.

use std::fmt;

use nalgebra::ComplexField;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Runtime tag for the two supported scalar fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

impl Field {
    /// Number of real coordinates carried by one scalar.
    pub fn real_dim(self) -> usize {
        match self {
            Field::Real => 1,
            Field::Complex => 2,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Real => "real",
            Field::Complex => "complex",
        })
    }
}

impl std::str::FromStr for Field {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "real" => Ok(Field::Real),
            "complex" => Ok(Field::Complex),
            other => Err(crate::Error::invalid(
                "field",
                format!("expected `real` or `complex`, got `{other}`"),
            )),
        }
    }
}

/// Matrix entry type. Implemented for `f64` and `Complex64`.
///
/// Conjugation is the identity on `f64`. Every routine in the crate is
/// generic over this trait so real and complex networks share one code path.
pub trait Scalar:
    ComplexField<RealField = f64> + Copy + Send + Sync + fmt::Debug + 'static
{
    const FIELD: Field;

    fn from_parts(re: f64, im: f64) -> Self;

    /// Standard Gaussian with unit total variance: real and imaginary parts
    /// are each N(0, 1/2) in the complex case.
    fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Independent N(0, 1) on every real coordinate.
    fn coordinate_noise<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Append the real coordinates of `self` to `out`.
    fn push_reals(self, out: &mut Vec<f64>);

    /// Read one scalar from the front of `src`, returning the remainder.
    fn take_reals(src: &[f64]) -> (Self, &[f64]);
}

impl Scalar for f64 {
    const FIELD: Field = Field::Real;

    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }

    fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn coordinate_noise<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    fn push_reals(self, out: &mut Vec<f64>) {
        out.push(self);
    }

    fn take_reals(src: &[f64]) -> (Self, &[f64]) {
        (src[0], &src[1..])
    }
}

impl Scalar for Complex64 {
    const FIELD: Field = Field::Complex;

    fn from_parts(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }

    fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    fn coordinate_noise<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    }

    fn push_reals(self, out: &mut Vec<f64>) {
        out.push(self.re);
        out.push(self.im);
    }

    fn take_reals(src: &[f64]) -> (Self, &[f64]) {
        (Complex64::new(src[0], src[1]), &src[2..])
    }
}
