use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type of tensors and parameters (`f32` or `f64`).
pub trait Real:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for constants and initialisation.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 always converts to a float type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float always converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
