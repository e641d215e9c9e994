//! Turning a relative-entropy value into privacy figures.
//!
//! Total variation is bounded by `√(KL/2)`, which caps the advantage of any
//! membership test. If the reference law satisfies a log-Sobolev inequality
//! with constant `C_t` and the privacy loss `F = log(p_t/p'_t)` is Lipschitz,
//! then `P(F ≥ KL + r) ≤ exp(−r²/(C_t‖F‖²_Lip))`, so `(ε, δ)`-DP holds with
//! `r = ε − KL`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// An `(ε, δ)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(invalid("epsilon", "must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(invalid("delta", "must lie in [0, 1]"));
        }
        Ok(PrivacyBudget { epsilon, delta })
    }
}

/// LSI constant, Lipschitz constant of the privacy loss and the KL value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationParams {
    #[serde(rename = "C_t")]
    pub c_t: f64,
    pub lip: f64,
    pub kl: f64,
}

impl ConcentrationParams {
    pub fn new(c_t: f64, lip: f64, kl: f64) -> Result<Self> {
        let p = ConcentrationParams { c_t, lip, kl };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_t > 0.0 && self.c_t.is_finite()) {
            return Err(invalid("C_t", "must be positive and finite"));
        }
        if !(self.lip > 0.0 && self.lip.is_finite()) {
            return Err(invalid("lip", "must be positive and finite"));
        }
        if !(self.kl >= 0.0 && self.kl.is_finite()) {
            return Err(invalid("kl", "must be nonnegative and finite"));
        }
        Ok(())
    }

    /// `(ε, δ)` at a given `ε`.
    pub fn budget_at_eps(&self, eps: f64) -> PrivacyBudget {
        PrivacyBudget {
            epsilon: eps,
            delta: delta_from_eps(eps, self),
        }
    }
}

/// `min(1, √(KL/2))`.
pub fn membership_advantage(kl: f64) -> f64 {
    (kl / 2.0).sqrt().min(1.0)
}

/// `δ(ε) = exp(−(ε − KL)²/(C_t lip²))`, or 1 when `ε ≤ KL`.
pub fn delta_from_eps(eps: f64, cp: &ConcentrationParams) -> f64 {
    if eps <= cp.kl {
        return 1.0;
    }
    concentration_tail(eps - cp.kl, cp.c_t, cp.lip)
}

/// `ε(δ) = KL + lip·√(C_t ln(1/δ))` for `δ ∈ (0, 1)`.
pub fn eps_from_delta(delta: f64, cp: &ConcentrationParams) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    Ok(cp.kl + cp.lip * (cp.c_t * -delta.ln()).sqrt())
}

/// `exp(−r²/(C_t lip²))`.
pub fn concentration_tail(r: f64, c_t: f64, lip: f64) -> f64 {
    (-(r * r) / (c_t * lip * lip)).exp()
}
