//! Scalar abstraction: the numeric kernels are generic over `f32`/`f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
///
/// Everything analytic (series, quadrature, root finding, test statistics) is
/// written against this trait; simulations hand it uniform variates through
/// [`Scalar::unit_from_bits`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Map a raw 64-bit word to a uniform variate in `[0, 1)`, using the
    /// high-order bits.
    fn unit_from_bits(bits: u64) -> Self;

    /// Lossy conversion from `f64` (used for constants and config values).
    fn from_real(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Widening conversion to `f64`.
    fn real(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn unit_from_bits(bits: u64) -> f64 {
        // 53 high bits -> [0,1) on the 2^-53 grid.
        (bits >> 11) as f64 * (1.0 / 9007199254740992.0)
    }
}

impl Scalar for f32 {
    #[inline(always)]
    fn unit_from_bits(bits: u64) -> f32 {
        (bits >> 40) as f32 * (1.0 / 16777216.0)
    }
}
