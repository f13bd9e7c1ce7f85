//! Scalar abstraction shared by every geometric routine in the crate.

use nalgebra::RealField;
use num_traits::{NumCast, ToPrimitive};

/// Floating point scalar usable by the pipeline: `f32` or `f64`.
///
/// Tolerances quoted in tests (1e-9 and tighter) assume `f64`; `f32` works
/// end to end with correspondingly looser accuracy.
pub trait Real: RealField + Copy + NumCast + ToPrimitive + Default + Send + Sync + 'static {
    /// Converts an `f64` literal or parameter into this scalar.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 is representable in every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Real values convert to f64")
    }

    #[inline]
    fn from_degrees(deg: f64) -> Self {
        Self::of(deg.to_radians())
    }

    #[inline]
    fn to_degrees(self) -> f64 {
        self.as_f64().to_degrees()
    }

    /// Floor of a non-negative value as an index, saturating at `usize::MAX`.
    #[inline]
    fn floor_index(self) -> usize {
        let f = self.floor().as_f64();
        if f <= 0.0 {
            0
        } else if f >= usize::MAX as f64 {
            usize::MAX
        } else {
            f as usize
        }
    }

    /// Floor as a signed integer; used for voxel coordinates.
    #[inline]
    fn floor_i64(self) -> i64 {
        self.floor().as_f64() as i64
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        assert_eq!(f32::of(0.5), 0.5f32);
        assert_eq!(2.5f64.floor_index(), 2);
        assert_eq!((-1.5f64).floor_index(), 0);
        assert_eq!((-1.5f64).floor_i64(), -2);
        assert!((f64::from_degrees(180.0) - std::f64::consts::PI).abs() < 1e-15);
    }
}
