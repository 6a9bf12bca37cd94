//! Scalar abstraction shared by every numeric module.
//!
//! All of the math in this crate is written once against [`Real`] and
//! instantiated for `f32` and `f64`. Matrix work goes through `nalgebra`, so
//! the trait layers `nalgebra::RealField` (arithmetic, `sqrt`, `ln`, ...) with
//! the `num-traits` conversion traits used to move literals and counters in
//! and out of the generic domain.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the simulator and the solvers.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type (rounding for `f32`).
    #[inline]
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable as scalar")
    }

    /// Converts a count into the scalar type.
    #[inline]
    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("count representable as scalar")
    }

    /// Lossy conversion to `f64` for reporting.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the type.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }

    /// Absolute tolerance `tol` for `f64`, widened to a few ulps of `scale`
    /// when the type cannot resolve `tol` (i.e. for `f32`).
    #[inline]
    fn tolerance(tol: f64, scale: f64) -> Self {
        let floor = 64.0 * Self::eps().to_f64_lossy() * scale.abs().max(1.0);
        Self::of(tol.max(floor))
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_is_exact_for_f64_and_widened_for_f32() {
        assert_eq!(<f64 as Real>::tolerance(1e-12, 1.0), 1e-12);
        let t32 = <f32 as Real>::tolerance(1e-12, 1.0);
        assert!(t32 > 1e-6 && t32 < 1e-4);
    }
}
