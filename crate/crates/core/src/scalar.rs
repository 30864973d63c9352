use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the estimators are written against (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; used for data ages and constants.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
