use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::str::FromStr;

/// Floating-point scalar accepted by the generic modules (`f32` or `f64`).
pub trait Real:
    Float
    + rustfft::FftNum
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }
    /// Converts to `f64`.
    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl<T> Real for T where
    T: Float
        + rustfft::FftNum
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum
        + Debug
        + Display
        + FromStr
        + Send
        + Sync
        + 'static
{
}
