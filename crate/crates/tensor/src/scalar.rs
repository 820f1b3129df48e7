use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the numeric kernels are generic over.
///
/// Implemented for `f32` and `f64`; the pipeline instantiates `f64` by
/// default (see the aliases at the crate root of each crate).
pub trait Scalar:
    Float
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
    /// Convert an `f64` literal into this scalar type.
    fn c(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal not representable")
    }

    /// Widen to `f64` (exact for f32/f64).
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar not convertible to f64")
    }
}

impl<T> Scalar for T where
    T: Float
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
}
