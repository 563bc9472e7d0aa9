//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Scalar`], which is any
//! IEEE float with the handful of extras we need (conversion from `f64`
//! constants, `erf` for the exact GELU). The shipped pipeline instantiates at
//! `f64`; `f32` is available for memory-constrained inference but cannot meet
//! the tight tolerances the test suite asserts.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` constant.
    fn c(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant")
    }

    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    /// Gauss error function, exact to the precision of the type.
    fn erf(self) -> Self {
        Self::c(libm::erf(self.to_f64_c()))
    }
}

impl Scalar for f64 {
    fn c(value: f64) -> Self {
        value
    }

    fn to_f64_c(self) -> f64 {
        self
    }

    fn erf(self) -> Self {
        libm::erf(self)
    }
}

impl Scalar for f32 {}

/// Numerically stable softplus: `ln(1 + e^x)`.
pub fn softplus<T: Scalar>(x: T) -> T {
    // max(x, 0) + ln(1 + e^{-|x|}) avoids overflow for large |x|.
    x.max(T::zero()) + x.abs().neg().exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Exact Gaussian-CDF GELU: `0.5 * x * (1 + erf(x / sqrt(2)))`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    half * x * (T::one() + (x / T::c(std::f64::consts::SQRT_2)).erf())
}

/// Derivative of [`gelu`]: `Phi(x) + x * phi(x)` with the standard normal
/// CDF `Phi` and pdf `phi`.
pub fn gelu_derivative<T: Scalar>(x: T) -> T {
    let half = T::c(0.5);
    let cdf = half * (T::one() + (x / T::c(std::f64::consts::SQRT_2)).erf());
    let pdf = T::c(1.0 / (2.0 * std::f64::consts::PI).sqrt()) * (-(x * x) * half).exp();
    cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for i in -40..=40 {
            let x = i as f64 * 0.5;
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn softplus_is_stable_for_extreme_inputs() {
        assert!((softplus(800.0_f64) - 800.0).abs() < 1e-9);
        assert_eq!(softplus(-800.0_f64), 0.0);
        assert!(softplus(-800.0_f64) >= 0.0);
    }

    #[test]
    fn sigmoid_symmetry() {
        for i in -20..=20 {
            let x = i as f64 * 0.7;
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gelu_zero_is_zero() {
        assert_eq!(gelu(0.0_f64), 0.0);
    }

    #[test]
    fn gelu_derivative_matches_finite_differences() {
        let h = 1e-6;
        for i in -30..=30 {
            let x = i as f64 * 0.3 + 0.05;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!(
                (gelu_derivative(x) - fd).abs() < 1e-8,
                "x={x} analytic={} fd={fd}",
                gelu_derivative(x)
            );
        }
    }
}
