//! Floating-point scalar abstraction shared by the model, trainer and metrics.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Real scalar the numerical core is generic over: `f32` for training,
/// `f64` for gradient verification.
pub trait Scalar:
    Float
    + FftNum
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and stored statistics.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
