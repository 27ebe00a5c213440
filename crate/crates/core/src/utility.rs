//! Isoelastic (constant relative risk aversion) utility.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Risk-aversion specification. `eta == 1` selects the logarithmic branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilitySpec {
    pub eta: f64,
}

impl UtilitySpec {
    pub fn new(eta: f64) -> Result<Self> {
        if !eta.is_finite() || eta < 0.0 {
            return Err(Error::invalid(format!("eta must be >= 0, got {eta}")));
        }
        Ok(UtilitySpec { eta })
    }

    pub fn log() -> Self {
        UtilitySpec { eta: 1.0 }
    }
}

/// `(w^(1-eta) - 1) / (1-eta)`, or `ln w` at `eta = 1`. Wealth must be
/// strictly positive; simulation clamps wealth before evaluating.
pub fn isoelastic_utility(w: f64, eta: f64) -> Result<f64> {
    if w.is_nan() || w <= 0.0 {
        return Err(Error::invalid(format!("wealth must be > 0, got {w}")));
    }
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::invalid(format!("eta must be >= 0, got {eta}")));
    }
    Ok(utility_on::<f64>(w, eta))
}

/// Unchecked generic form used inside rollouts.
pub(crate) fn utility_on<S: Scalar>(w: S, eta: f64) -> S {
    if eta == 1.0 {
        w.ln()
    } else {
        let gamma: f64 = 1.0 - eta;
        (w.pow_const(gamma) - 1.0) / gamma
    }
}
