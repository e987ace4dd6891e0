use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point type the retrieval and metric code is written against.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Allowed deviation of a unit vector's L2 norm from 1.
    const NORM_TOLERANCE: f64;

    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f64 {
    const NORM_TOLERANCE: f64 = 1e-9;
}

impl Scalar for f32 {
    const NORM_TOLERANCE: f64 = 1e-5;
}

/// Ratio of two counts, 0 when the denominator is 0.
pub(crate) fn ratio<S: Scalar>(num: usize, den: usize) -> S {
    if den == 0 {
        S::zero()
    } else {
        S::of(num as f64) / S::of(den as f64)
    }
}
