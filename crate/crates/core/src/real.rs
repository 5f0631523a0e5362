//! Scalar abstraction so the numeric paths run at either precision.
//!
//! Gradient checks and oracle tests run at f64; training runs at f32 so
//! checkpoints round-trip losslessly through the 32-bit on-disk format.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap()
    }
    fn of_usize(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).unwrap()
    }
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap()
    }
    fn to_f32_lossy(self) -> f32 {
        <Self as ToPrimitive>::to_f32(&self).unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Training precision.
pub type TrainScalar = f32;
/// Verification precision.
pub type CheckScalar = f64;
