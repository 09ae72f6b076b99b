//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::LowerExp;

use nalgebra::RealField;
use num_traits::ToPrimitive;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the solvers are generic over (`f32` or `f64`).
pub trait Real:
    RealField + Copy + ToPrimitive + LowerExp + Serialize + DeserializeOwned + Default
{
    /// Lossless for `f64`, rounded for `f32`.
    #[inline]
    fn of(x: f64) -> Self {
        nalgebra::convert(x)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Smallest tolerance that is meaningful at this precision, never looser than `tol`
    /// would allow for `f64`.
    #[inline]
    fn floor_tol(tol: f64) -> Self {
        let eps = Self::default_epsilon().as_f64();
        Self::of(tol.max(64.0 * eps))
    }
}

impl Real for f32 {}
impl Real for f64 {}
