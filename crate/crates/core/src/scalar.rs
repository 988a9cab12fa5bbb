//! Scalar abstraction for the numeric pipeline.
//!
//! Everything downstream of reward scoring (advantages, objectives, metrics,
//! the toy policy) is generic over [`Real`], implemented for `f32` and `f64`.
//! The zero-sum identities in the advantage pipeline are asserted at 1e-12,
//! which only double precision meets, so the crate-root aliases fix `f64` as
//! the shipped instantiation; `f32` remains available for experimentation.

use num_traits::{Float, FromPrimitive, NumAssignOps};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the core math is generic over.
pub trait Real:
    Float + FromPrimitive + NumAssignOps + Sum<Self> + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts from `f64`, panicking only on values no float type can hold.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 value representable as Real")
    }

    /// Converts a count into the scalar type.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize value representable as Real")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + NumAssignOps
        + Sum<Self>
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Mean of a slice. Returns zero for empty input.
pub fn mean<R: Real>(xs: &[R]) -> R {
    if xs.is_empty() {
        return R::zero();
    }
    xs.iter().copied().sum::<R>() / R::of_usize(xs.len())
}

/// Population standard deviation (divides by N, not N−1).
pub fn population_std<R: Real>(xs: &[R]) -> R {
    if xs.is_empty() {
        return R::zero();
    }
    let m = mean(xs);
    let var = xs.iter().map(|&x| (x - m) * (x - m)).sum::<R>() / R::of_usize(xs.len());
    var.sqrt()
}
