//! Scalar abstraction shared by every kernel.
//!
//! Data may be stored as `f32` or `f64`; reductions and products are
//! accumulated in `f64` regardless of the storage type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point storage type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Widen to `f64` for accumulation.
    #[inline]
    fn wide(self) -> f64 {
        // f32 -> f64 and f64 -> f64 never fail
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Narrow an accumulated `f64` back to the storage type.
    #[inline]
    fn narrow(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
