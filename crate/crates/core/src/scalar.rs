use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the whole crate is generic over.
///
/// Implemented by `f32` and `f64`. The bound deliberately goes through
/// [`nalgebra::RealField`] rather than `num_traits::Float` so that method
/// calls like `x.sqrt()` resolve unambiguously inside generic code.
pub trait Real:
    nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into the working scalar.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
    }

    /// Widens the working scalar to `f64` (exact for both `f32` and `f64`).
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not convertible to f64")
    }

    /// Comparison slack for orthonormality checks: tight for `f64`, looser
    /// for `f32` where 1e-9 would be below representable rounding error.
    #[inline]
    fn orthonormal_tol() -> Self {
        let eps = Self::default_epsilon() * Self::of(64.0);
        if eps > Self::of(1e-9) {
            eps
        } else {
            Self::of(1e-9)
        }
    }
}

impl<T> Real for T where
    T: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default + Send + Sync + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn of_and_back_roundtrip() {
        assert_eq!(f64::of(1.25), 1.25);
        assert_eq!(f32::of(1.25), 1.25f32);
        assert_eq!(1.25f32.as_f64(), 1.25);
    }

    #[test]
    fn orthonormal_tol_scales_with_precision() {
        assert_eq!(f64::orthonormal_tol(), 1e-9);
        assert!(f32::orthonormal_tol() > 1e-6);
    }
}
