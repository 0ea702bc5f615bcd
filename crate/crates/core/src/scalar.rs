//! Scalar abstraction for probabilities and metric values.
//!
//! Decision logic and metrics are written once over [`Probability`] and
//! instantiated with `f64` for the scoring pipeline and with exact rationals
//! ([`Exact`]) where boundary cases must be decided without rounding.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Exact rational probability.
pub type Exact = Ratio<i64>;

pub trait Probability:
    Num + Copy + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    fn half() -> Self {
        Self::one() / (Self::one() + Self::one())
    }

    /// Converts a count into the scalar type.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Lossy conversion used for tolerances and configuration constants.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn abs_diff(self, other: Self) -> Self {
        if self >= other {
            self - other
        } else {
            other - self
        }
    }

    fn in_unit_interval(self) -> bool {
        self >= Self::zero() && self <= Self::one()
    }
}

impl<T> Probability for T where
    T: Num + Copy + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}
