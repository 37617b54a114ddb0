//! Floating-point scalar abstraction shared by every numerical routine.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the solvers (`f32` and `f64`).
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Conversion from a count.
    fn from_usize_lossy(k: usize) -> Self {
        Self::from_usize(k).expect("count representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon.
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
