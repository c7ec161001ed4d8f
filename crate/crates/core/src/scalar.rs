//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the model and influence machinery are generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Floor applied to probabilities before taking logarithms.
    #[inline]
    fn prob_floor() -> Self {
        // 1e-300 underflows in f32; use the smallest positive normal there.
        Self::from_f64(1e-300)
            .filter(|v| *v > Self::zero())
            .unwrap_or_else(Self::min_positive_value)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
