//! Shared domain types: the validated dataset, parameter vectors and fit
//! results.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MvrError, Result};
use crate::scale::ScaleFamily;

/// Relative pivot tolerance of the rank check.
pub const RANK_TOL: f64 = 1e-10;

/// Outcome vector plus a design matrix whose column 0 is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    column_names: Vec<String>,
}

impl Dataset {
    /// Validates and wraps `(y, x)`. See [`validate_dataset`].
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        validate_dataset(y, x, column_names)
    }

    /// Builds a dataset from regressors without the intercept column; the
    /// intercept is prepended and named `"(Intercept)"`.
    pub fn with_intercept(
        y: DVector<f64>,
        regressors: DMatrix<f64>,
        regressor_names: Vec<String>,
    ) -> Result<Self> {
        let n = regressors.nrows();
        if y.len() != n {
            return Err(MvrError::DimensionMismatch(format!(
                "y has {} rows, regressors have {}",
                y.len(),
                n
            )));
        }
        let k = regressors.ncols() + 1;
        let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { regressors[(i, j - 1)] });
        let mut names = Vec::with_capacity(k);
        names.push("(Intercept)".to_string());
        names.extend(regressor_names);
        validate_dataset(y, x, names)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Same design with a different outcome vector.
    pub fn with_y(&self, y: DVector<f64>) -> Result<Self> {
        validate_dataset(y, self.x.clone(), self.column_names.clone())
    }

    /// Linear index `X γ`.
    pub fn index(&self, gamma: &DVector<f64>) -> DVector<f64> {
        &self.x * gamma
    }
}

/// Checks the dataset invariants: consistent dimensions, `n ≥ k ≥ 1`, finite
/// entries, an all-ones column 0, and full column rank.
pub fn validate_dataset(
    y: DVector<f64>,
    x: DMatrix<f64>,
    column_names: Vec<String>,
) -> Result<Dataset> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(MvrError::DimensionMismatch(format!("y has {} rows, x has {}", y.len(), n)));
    }
    if column_names.len() != k {
        return Err(MvrError::DimensionMismatch(format!(
            "{} column names for {} columns",
            column_names.len(),
            k
        )));
    }
    if k == 0 || n < k || n == 0 {
        return Err(MvrError::TooFewRows { n, k });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(MvrError::NonFinite { what: "y" });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MvrError::NonFinite { what: "x" });
    }
    if let Some(row) = (0..n).find(|&i| x[(i, 0)] != 1.0) {
        return Err(MvrError::NoIntercept { row, value: x[(row, 0)] });
    }
    if !has_full_column_rank(&x) {
        return Err(MvrError::RankDeficient);
    }
    Ok(Dataset { y, x, column_names })
}

/// Column-pivoted QR of the column-normalised matrix; rank deficient when a
/// pivot falls below `RANK_TOL` relative to the largest.
pub(crate) fn has_full_column_rank(x: &DMatrix<f64>) -> bool {
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return false;
        }
        col /= norm;
    }
    let r = scaled.col_piv_qr().r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|j| r[(j, j)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    max > 0.0 && diag.iter().all(|&d| d > RANK_TOL * max)
}

/// Stacked `(β, γ)` with the scale family it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub scale: ScaleFamily,
}

impl ThetaEstimate {
    pub fn new(beta: DVector<f64>, gamma: DVector<f64>, scale: ScaleFamily) -> Self {
        Self { beta, gamma, scale }
    }

    pub fn k(&self) -> usize {
        self.beta.len()
    }

    /// `(β', γ')'` as one vector of length `2k`.
    pub fn stacked(&self) -> DVector<f64> {
        let k = self.beta.len();
        DVector::from_fn(2 * k, |i, _| if i < k { self.beta[i] } else { self.gamma[i - k] })
    }

    pub fn from_stacked(theta: &DVector<f64>, scale: ScaleFamily) -> Self {
        let k = theta.len() / 2;
        Self {
            beta: theta.rows(0, k).into_owned(),
            gamma: theta.rows(k, k).into_owned(),
            scale,
        }
    }

    pub(crate) fn check_dims(&self, data: &Dataset) -> Result<()> {
        if self.beta.len() != data.k() || self.gamma.len() != data.k() {
            return Err(MvrError::DimensionMismatch(format!(
                "theta has (beta, gamma) lengths ({}, {}), data has k = {}",
                self.beta.len(),
                self.gamma.len(),
                data.k()
            )));
        }
        Ok(())
    }
}

/// `true` iff `min_i s(x_i'γ) > 0`.
pub fn is_feasible(theta: &ThetaEstimate, data: &Dataset) -> Result<bool> {
    theta.check_dims(data)?;
    Ok(gamma_is_feasible(theta.scale, &theta.gamma, data, 0.0))
}

/// Every index `x_i'γ` exceeds `margin` (linear scale) or is finite
/// (exponential scale).
pub(crate) fn gamma_is_feasible(
    family: ScaleFamily,
    gamma: &DVector<f64>,
    data: &Dataset,
    margin: f64,
) -> bool {
    let t = data.index(gamma);
    match family {
        ScaleFamily::Linear => t.iter().all(|&v| v > margin),
        ScaleFamily::Exponential => t.iter().all(|v| v.is_finite()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorTag {
    #[serde(rename = "MVR")]
    Mvr,
    #[serde(rename = "OLS")]
    Ols,
    #[serde(rename = "WLS_L")]
    WlsL,
    #[serde(rename = "WLS_E")]
    WlsE,
    #[serde(rename = "GLS_ORACLE")]
    GlsOracle,
}

/// Output of every estimator.
///
/// `fitted_scale` is `s(x_i'γ̂)` for MVR and OLS, the variance-function
/// values `ŵ_i` for WLS and the supplied `σ_i` for the GLS oracle.
/// `weights` are the observation weights of the final (weighted) least-squares
/// problem that determines `β̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: ThetaEstimate,
    pub residuals_std: DVector<f64>,
    pub fitted_scale: DVector<f64>,
    pub weights: DVector<f64>,
    pub loss: f64,
    pub estimator_tag: EstimatorTag,
    pub converged: bool,
    /// MVR under the linear scale only: the loss infimum was reached on the
    /// boundary `x_i'γ → 0` for some rows (then `converged` is false).
    pub on_boundary: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl FitResult {
    pub fn beta(&self) -> &DVector<f64> {
        &self.theta.beta
    }

    pub fn gamma(&self) -> &DVector<f64> {
        &self.theta.gamma
    }

    /// Raw residuals `y_i − x_i'β̂`.
    pub fn residuals(&self, data: &Dataset) -> DVector<f64> {
        data.y() - data.x() * &self.theta.beta
    }
}
