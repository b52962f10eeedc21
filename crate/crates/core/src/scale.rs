//! Scale functions `s(t)` mapping the linear index `x'γ` to a conditional
//! standard deviation, together with their first three derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{MvrError, Result};

/// Largest argument accepted by the exponential scale before it is treated
/// as an overflow.
pub const EXP_OVERFLOW_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleFamily {
    /// `s(t) = t` on `(0, ∞)`.
    Linear,
    /// `s(t) = exp(t)` on the real line.
    Exponential,
}

/// The scale function and its derivatives evaluated at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleEval {
    pub s: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl ScaleFamily {
    /// Lower endpoint of the domain (`0` or `-∞`).
    pub fn domain_lower(self) -> f64 {
        match self {
            ScaleFamily::Linear => 0.0,
            ScaleFamily::Exponential => f64::NEG_INFINITY,
        }
    }

    /// Whether the family needs explicit positivity constraints on `x'γ`.
    pub fn is_constrained(self) -> bool {
        matches!(self, ScaleFamily::Linear)
    }

    pub fn in_domain(self, t: f64) -> bool {
        match self {
            ScaleFamily::Linear => t > 0.0 && t.is_finite(),
            ScaleFamily::Exponential => t.is_finite() && t <= EXP_OVERFLOW_LIMIT,
        }
    }

    /// Evaluates `s(t)` only.
    #[inline]
    pub fn value(self, t: f64) -> Result<f64> {
        match self {
            ScaleFamily::Linear => {
                if t > 0.0 {
                    Ok(t)
                } else {
                    Err(MvrError::DomainViolation { t })
                }
            }
            ScaleFamily::Exponential => {
                if t > EXP_OVERFLOW_LIMIT {
                    Err(MvrError::Overflow { t })
                } else {
                    Ok(t.exp())
                }
            }
        }
    }

    /// Evaluates `(s, s1, s2, s3)` at `t`.
    #[inline]
    pub fn eval(self, t: f64) -> Result<ScaleEval> {
        if !t.is_finite() {
            return Err(MvrError::NonFinite { what: "scale argument" });
        }
        let s = self.value(t)?;
        Ok(match self {
            ScaleFamily::Linear => ScaleEval { s, s1: 1.0, s2: 0.0, s3: 0.0 },
            ScaleFamily::Exponential => ScaleEval { s, s1: s, s2: s, s3: s },
        })
    }

    /// Solves `s(t) = value` for `t`.
    pub fn inverse(self, value: f64) -> Result<f64> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(MvrError::NonPositive(value));
        }
        Ok(match self {
            ScaleFamily::Linear => value,
            ScaleFamily::Exponential => value.ln(),
        })
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ScaleFamily::Linear => "linear",
            ScaleFamily::Exponential => "exp",
        }
    }
}

/// Free-function form of [`ScaleFamily::eval`].
pub fn eval(family: ScaleFamily, t: f64) -> Result<ScaleEval> {
    family.eval(t)
}

/// Free-function form of [`ScaleFamily::inverse`].
pub fn inverse(family: ScaleFamily, s_value: f64) -> Result<f64> {
    family.inverse(s_value)
}
