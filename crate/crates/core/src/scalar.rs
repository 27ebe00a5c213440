//! Arithmetic abstraction shared by the plain `f64` evaluation path and the
//! differentiable tape path.
//!
//! Rollout, network forward pass and utility are written once against this
//! trait. Instantiated at `f64` they cost nothing; instantiated at
//! [`crate::tape::Var`] they record a computation tape. Because both
//! instantiations execute the exact same expression tree, objective values
//! from the gradient pass are bit-identical to the plain forward pass.

use std::ops::{Add, Div, Mul, Sub};

/// Implementors additionally provide `f64 - Self` (used by the wealth
/// update); functions needing it state `where f64: Sub<S, Output = S>`
/// explicitly, which keeps ordinary float arithmetic in generic bodies
/// unambiguous.
pub trait Scalar:
    Copy
    + Add<Self, Output = Self>
    + Mul<Self, Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Current numeric value.
    fn value(self) -> f64;

    fn exp(self) -> Self;

    fn ln(self) -> Self;

    /// `x / (1 + e^{-x})`, the sigmoid-weighted linear unit.
    fn silu(self) -> Self;

    /// `self^e` for a constant exponent.
    fn pow_const(self, e: f64) -> Self;

    /// `max(self, floor)` with sub-derivative 0 on the clamped branch.
    fn clamp_min(self, floor: f64) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn exp(self) -> f64 {
        f64::exp(self)
    }

    #[inline]
    fn ln(self) -> f64 {
        f64::ln(self)
    }

    #[inline]
    fn silu(self) -> f64 {
        self / (1.0 + f64::exp(-self))
    }

    #[inline]
    fn pow_const(self, e: f64) -> f64 {
        self.powf(e)
    }

    #[inline]
    fn clamp_min(self, floor: f64) -> f64 {
        if self < floor {
            floor
        } else {
            self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silu_fixed_points() {
        assert_eq!(0.0_f64.silu(), 0.0);
        assert!((1.0_f64.silu() - 0.731_058_578_630_004_9).abs() < 1e-15);
        // Large arguments approach the identity.
        assert!((50.0_f64.silu() - 50.0).abs() / 50.0 < 1e-15);
        assert!((-50.0_f64).silu().abs() < 1e-15);
    }

    #[test]
    fn clamp_min_branches() {
        assert_eq!(2.0_f64.clamp_min(1.0), 2.0);
        assert_eq!(0.5_f64.clamp_min(1.0), 1.0);
        assert_eq!(1.0_f64.clamp_min(1.0), 1.0);
    }
}
