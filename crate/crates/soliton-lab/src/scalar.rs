//! Scalar abstraction shared by the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive};
use rustfft::FftNum;

/// Floating-point type the numeric core is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + FftNum
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal; every finite literal used in the crate is representable.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn of(n: usize) -> Self {
        Self::lit(n as f64)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Gauss-Legendre nodes and weights on [-1, 1] (16 points).
pub(crate) const GL16: [(f64, f64); 8] = [
    (0.095_012_509_837_637_44, 0.189_450_610_455_068_5),
    (0.281_603_550_779_258_9, 0.182_603_415_044_923_6),
    (0.458_016_777_657_227_4, 0.169_156_519_395_002_5),
    (0.617_876_244_402_643_7, 0.149_595_988_816_576_7),
    (0.755_404_408_355_003, 0.124_628_971_255_533_9),
    (0.865_631_202_387_831_8, 0.095_158_511_682_492_78),
    (0.944_575_023_073_232_6, 0.062_253_523_938_647_89),
    (0.989_400_934_991_649_9, 0.027_152_459_411_754_09),
];

/// 16-point Gauss-Legendre rule for `g` on `[a, b]`.
pub(crate) fn gauss_legendre<T: Real>(a: T, b: T, mut g: impl FnMut(T) -> T) -> T {
    let half = (b - a) / T::lit(2.0);
    let mid = (a + b) / T::lit(2.0);
    let mut acc = T::zero();
    for &(node, w) in GL16.iter() {
        let dx = half * T::lit(node);
        acc += T::lit(w) * (g(mid - dx) + g(mid + dx));
    }
    acc * half
}

/// Adaptive Gauss-Legendre quadrature with interval bisection.
pub(crate) fn adaptive_quad<T: Real>(a: T, b: T, tol: T, g: &mut impl FnMut(T) -> T) -> T {
    fn rec<T: Real>(a: T, b: T, whole: T, tol: T, depth: u32, g: &mut impl FnMut(T) -> T) -> T {
        let m = (a + b) / T::lit(2.0);
        let left = gauss_legendre(a, m, &mut *g);
        let right = gauss_legendre(m, b, &mut *g);
        let both = left + right;
        if depth == 0 || (both - whole).abs() <= tol {
            return both;
        }
        let half_tol = tol / T::lit(2.0);
        rec(a, m, left, half_tol, depth - 1, g) + rec(m, b, right, half_tol, depth - 1, g)
    }
    let whole = gauss_legendre(a, b, &mut *g);
    rec(a, b, whole, tol, 30, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // Degree 31 is the exactness limit of a 16-point rule.
        let v = gauss_legendre(0.0_f64, 2.0, |x| x.powi(31));
        assert!((v - 2f64.powi(32) / 32.0).abs() / v < 1e-13);
    }

    #[test]
    fn adaptive_quad_handles_peaked_integrand() {
        let mut g = |x: f64| 1.0 / (1e-4 + x * x);
        let v = adaptive_quad(-1.0, 1.0, 1e-12, &mut g);
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((v - exact).abs() / exact < 1e-11);
    }

    #[test]
    fn literals_round_trip_in_both_precisions() {
        assert_eq!(<f64 as Real>::lit(0.25), 0.25);
        assert_eq!(<f32 as Real>::lit(0.25), 0.25f32);
        assert_eq!(<f32 as Real>::of(7).as_f64(), 7.0);
    }
}
