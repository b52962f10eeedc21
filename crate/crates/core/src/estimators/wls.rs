//! Feasible weighted least squares with a parametric variance function
//! estimated from log squared OLS residuals.
//!
//! With OLS residuals `û_i` and non-intercept regressors `x̃_i`, the first stage
//! is
//!
//! * linear variant: `max(δ², û_i²)` on `(1, |x̃_i|)` subject to
//!   `ν + π'|x̃_i| ≥ δ` for every row, giving `ŵ_i = ν̂ + π̂'|x̃_i|`;
//! * exponential variant: `log(max(δ², û_i²))` on `(1, log|x̃_i|)` by OLS,
//!   giving `ŵ_i = exp(ν̂ + π̂' log|x̃_i|)`.
//!
//! In both cases `ŵ_i` estimates the variance.
//!
//! The second stage is `β̂ = [X'W⁻¹X]⁻¹ X'W⁻¹ y` with `W = diag(ŵ_i)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{assemble_fit, lsei::lsei_lower_bound};
use crate::error::{MvrError, Result};
use crate::linalg::weighted_least_squares;
use crate::scale::ScaleFamily;
use crate::types::{has_full_column_rank, Dataset, EstimatorTag, FitResult, ThetaEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WlsKind {
    LinearScale,
    ExponentialScale,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsVariant {
    pub kind: WlsKind,
    pub delta: f64,
}

impl WlsVariant {
    pub const DEFAULT_DELTA: f64 = 0.1;

    pub fn linear() -> Self {
        Self { kind: WlsKind::LinearScale, delta: Self::DEFAULT_DELTA }
    }

    pub fn exponential() -> Self {
        Self { kind: WlsKind::ExponentialScale, delta: Self::DEFAULT_DELTA }
    }
}

pub fn fit_wls(data: &Dataset, variant: WlsVariant) -> Result<FitResult> {
    if !(variant.delta > 0.0) {
        return Err(MvrError::BadArgument(format!("delta must be > 0, got {}", variant.delta)));
    }
    let (n, k) = (data.n(), data.k());
    let ones = DVector::from_element(n, 1.0);
    let beta_ols = weighted_least_squares(data.x(), data.y(), &ones)?;
    let resid = data.y() - data.x() * &beta_ols;
    let floor = variant.delta * variant.delta;
    let response = match variant.kind {
        WlsKind::LinearScale => resid.map(|u| (u * u).max(floor)),
        WlsKind::ExponentialScale => resid.map(|u| (u * u).max(floor).ln()),
    };

    let z = match variant.kind {
        WlsKind::LinearScale => DMatrix::from_fn(n, k, |i, j| {
            if j == 0 {
                1.0
            } else {
                data.x()[(i, j)].abs()
            }
        }),
        WlsKind::ExponentialScale => {
            for j in 1..k {
                if (0..n).any(|i| data.x()[(i, j)] == 0.0) {
                    return Err(MvrError::LogOfZeroRegressor { column: j });
                }
            }
            DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { data.x()[(i, j)].abs().ln() })
        }
    };
    if !has_full_column_rank(&z) {
        return Err(MvrError::RankDeficient);
    }

    let (coef, variance, tag, family) = match variant.kind {
        WlsKind::LinearScale => {
            let sol = lsei_lower_bound(&z, &response, variant.delta)?;
            // Clip rounding-level violations of the bound.
            let w = (&z * &sol.coef).map(|v| v.max(variant.delta));
            (sol.coef, w, EstimatorTag::WlsL, ScaleFamily::Linear)
        }
        WlsKind::ExponentialScale => {
            let c = weighted_least_squares(&z, &response, &ones)?;
            let w = (&z * &c).map(f64::exp);
            (c, w, EstimatorTag::WlsE, ScaleFamily::Exponential)
        }
    };
    if variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(MvrError::NonFinite { what: "WLS variance function" });
    }
    let weights = variance.map(|v| 1.0 / v);
    let beta = weighted_least_squares(data.x(), data.y(), &weights)?;
    // γ holds the first-stage coefficients (on the transformed regressors).
    let theta = ThetaEstimate::new(beta, coef, family);
    Ok(assemble_fit(data, theta, variance, weights, tag))
}
