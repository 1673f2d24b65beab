//! Floating-point scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used throughout the estimators: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Newton stopping tolerance on `|g' delta|`.
    fn newton_tol() -> Self;

    /// Tolerance used when checking that a matrix is symmetric.
    fn symmetry_tol() -> Self;

    #[inline]
    fn c(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite constant")
    }

    #[inline]
    fn from_usize_exact(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("representable count")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn newton_tol() -> Self {
        1e-8
    }
    fn symmetry_tol() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    fn newton_tol() -> Self {
        1e-4
    }
    fn symmetry_tol() -> Self {
        1e-4
    }
}
