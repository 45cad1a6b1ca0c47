//! Scalar abstraction: all numerics are generic over a floating-point type.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the whole crate is generic over (f32 or f64).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + std::fmt::Debug
        + std::fmt::Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Convert an f64 constant into the working scalar type.
#[inline]
pub fn real<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("f64 constant representable in scalar type")
}

/// Widen a scalar to f64 (for reporting and serialization).
#[inline]
pub fn to_f64<R: Real>(x: R) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}
