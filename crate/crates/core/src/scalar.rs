//! Scalar abstraction so the whole stack runs in f32 or f64.
//!
//! f64 is what the gradient-check and acceptance suites use; f32 is available
//! for speed-sensitive experiments.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};

pub trait Scalar:
    Float
    + NumAssignOps
    + ScalarOperand
    + LinalgScalar
    + FromPrimitive
    + ToPrimitive
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
