//! Scalar abstraction for all probability and surprisal arithmetic.
//!
//! Everything numeric in this crate is generic over [`Real`] so the same
//! code runs in `f32` or `f64`. The crate root exports `f64` aliases for
//! the common case.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar: `f32` or `f64` (or anything float-like).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, for literals and RNG output.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum<T>
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
