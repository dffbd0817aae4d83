//! Scalar abstraction shared by the geometric core.

use nalgebra as na;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by every geometric routine: `f32` or `f64`.
///
/// Method calls such as `sqrt` resolve through [`na::ComplexField`]; the
/// `num_traits` conversions are only used for literals and reporting.
pub trait Real: na::RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite literal")
    }

    /// Lossy widening used for diagnostics and file output.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the scalar type.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_convert() {
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert_eq!(f64::lit(-2.25), -2.25);
        assert_eq!(1.5f32.to_f64_lossy(), 1.5);
        assert!(f32::eps() > f64::eps() as f32);
    }
}
