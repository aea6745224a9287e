//! Scalar abstraction: the numeric kernels are generic over `Real` so the
//! same code runs in `f32` or `f64`. Pipeline code uses the `F` alias from
//! the crate root (`f64`).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }
    fn as_f64(self) -> f64 {
        self.to_f64().expect("to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for converting an `f64` literal into the working scalar type.
#[inline]
pub fn fl<T: Real>(x: f64) -> T {
    T::from_f64_lossy(x)
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline]
pub fn l2_norm<T: Real>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

#[inline]
pub fn linf_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Euclidean distance between two equal-length vectors.
#[inline]
pub fn l2_dist<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc += d * d;
    }
    acc.sqrt()
}

/// Numerically stable softplus: `ln(1 + e^z)`.
#[inline]
pub fn softplus<T: Real>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of softplus.
#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_direct_formula_in_safe_range() {
        for &z in &[-5.0f64, -1.0, 0.0, 0.3, 2.0, 8.0] {
            let direct = (1.0 + z.exp()).ln();
            assert!((softplus(z) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-9);
        assert_eq!(softplus(-800.0f64), 0.0);
    }

    #[test]
    fn sigmoid_is_softplus_derivative() {
        let h = 1e-6;
        for &z in &[-3.0f64, -0.5, 0.0, 1.2, 4.0] {
            let fd = (softplus(z + h) - softplus(z - h)) / (2.0 * h);
            assert!((sigmoid(z) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn norms_agree_with_hand_values() {
        let v = [3.0f64, 4.0];
        assert_eq!(l2_norm(&v), 5.0);
        assert_eq!(linf_norm(&v), 4.0);
        assert_eq!(l2_dist(&[0.0, 0.0], &v), 5.0);
    }
}
