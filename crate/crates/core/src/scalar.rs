use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, Signed, ToPrimitive};
use rustfft::FftNum;

/// Real scalar usable throughout the reconstruction pipeline: linear algebra
/// (nalgebra), FFTs (rustfft) and complex arithmetic (num-complex).
///
/// `RealField` and `num_traits::Signed` both provide `abs`; use [`Real::fabs`]
/// to avoid the ambiguity in generic code.
pub trait Real:
    RealField + FftNum + FromPrimitive + ToPrimitive + Copy + Default + Debug + Display + Send + Sync + 'static
{
    /// Machine epsilon of the concrete type.
    fn eps() -> Self;

    /// Conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Real converts to f64")
    }

    #[inline]
    fn fabs(self) -> Self {
        <Self as Signed>::abs(&self)
    }
}

impl Real for f64 {
    #[inline]
    fn eps() -> Self {
        f64::EPSILON
    }
}

impl Real for f32 {
    #[inline]
    fn eps() -> Self {
        f32::EPSILON
    }
}

/// Modulus of a complex number without requiring `num_traits::Float`.
#[inline]
pub fn cabs<T: Real>(c: num_complex::Complex<T>) -> T {
    c.norm_sqr().sqrt()
}
