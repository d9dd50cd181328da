/// Floating-point scalar the raster and solver code is generic over.
///
/// `f32` and `f64` both implement it. Conversions through `f64` are
/// infallible for these types, so the two helpers unwrap internally.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + Copy
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    fn from_f64_c(v: f64) -> Self;
    fn to_f64_c(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_c(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_c(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_c(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_c(self) -> f64 {
        self
    }
}
