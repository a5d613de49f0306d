//! Scalar abstraction for the geometric and linear-algebra kernels.

/// Floating-point scalar the numeric kernels are generic over.
///
/// `f64` is the working type everywhere tolerances matter; `f32` is supported
/// for the geometric primitives so they can be reused in lower-precision
/// settings. Exact predicate evaluation always happens in `f64`.
pub trait Real:
    num_traits::Float + num_traits::FromPrimitive + num_traits::NumAssign + std::fmt::Debug + 'static
{
    fn from_f64(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("finite literal")
    }
    fn to_f64(self) -> f64;
    const TWO: Self;
    const HALF: Self;
}

impl Real for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    const TWO: Self = 2.0;
    const HALF: Self = 0.5;
}

impl Real for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    const TWO: Self = 2.0;
    const HALF: Self = 0.5;
}
