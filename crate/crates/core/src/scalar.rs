use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point type the numerical core is generic over.
///
/// Implemented for `f32` and `f64`. Tolerances quoted throughout the test
/// suites assume `f64`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + std::fmt::Debug + 'static
{
    /// Converts an `f64` literal or intermediate into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::lit(x)
}
