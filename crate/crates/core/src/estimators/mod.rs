//! Fitting routines: MVR, OLS, feasible WLS, a known-variance GLS oracle and
//! the two-step sequential oracle.

pub mod lsei;
mod sequential;
mod wls;

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{MvrError, Result};
use crate::linalg::weighted_least_squares;
use crate::objective::fitted_scales;
use crate::scale::ScaleFamily;
use crate::solver::{minimize, SolverOptions, SolverStatus};
use crate::types::{Dataset, EstimatorTag, FitResult, ThetaEstimate};

pub use sequential::{sequential_oracle, SequentialFit};
pub use wls::{fit_wls, WlsKind, WlsVariant};

/// Builds a `FitResult` for estimators whose `β̂` solves a weighted
/// least-squares problem. The reported loss is `n⁻¹ Σ w_i û_i²`.
pub(crate) fn assemble_fit(
    data: &Dataset,
    theta: ThetaEstimate,
    fitted_scale: DVector<f64>,
    weights: DVector<f64>,
    tag: EstimatorTag,
) -> FitResult {
    let resid = data.y() - data.x() * &theta.beta;
    let residuals_std = resid.component_div(&fitted_scale);
    let n = data.n() as f64;
    let loss = resid.iter().zip(weights.iter()).map(|(u, w)| w * u * u).sum::<f64>() / n;
    // Max-norm of the weighted normal equations.
    let grad_norm = (data.x().transpose() * resid.component_mul(&weights)).amax() / n;
    FitResult {
        theta,
        residuals_std,
        fitted_scale,
        weights,
        loss,
        estimator_tag: tag,
        converged: true,
        on_boundary: false,
        iterations: 0,
        grad_norm,
    }
}

/// MVR fit. Non-convergence is reported through `converged = false` together
/// with the solver's last iterate; `on_boundary` marks a boundary solution.
pub fn fit_mvr(data: &Dataset, family: ScaleFamily, opts: &SolverOptions) -> Result<FitResult> {
    let report = minimize(data, family, opts)?;
    if !report.loss.is_finite() {
        return Err(MvrError::Solver(format!("solver stopped with status {:?}", report.status)));
    }
    let fitted_scale = fitted_scales(data, family, &report.theta.gamma)?;
    let resid = data.y() - data.x() * &report.theta.beta;
    Ok(FitResult {
        residuals_std: resid.component_div(&fitted_scale),
        weights: fitted_scale.map(|s| 1.0 / s),
        fitted_scale,
        loss: report.loss,
        estimator_tag: EstimatorTag::Mvr,
        converged: report.converged(),
        on_boundary: report.status == SolverStatus::Boundary,
        iterations: report.iterations,
        grad_norm: report.grad_inf_norm,
        theta: report.theta,
    })
}

/// OLS viewed as the constant-scale MVR problem: `s(γ̂)` is the residual
/// root mean square, which is also the loss value. `γ̂ = (σ̂, 0, …, 0)` under
/// the linear scale.
pub fn fit_ols(data: &Dataset) -> Result<FitResult> {
    let n = data.n();
    let ones = DVector::from_element(n, 1.0);
    let beta = weighted_least_squares(data.x(), data.y(), &ones)?;
    let resid = data.y() - data.x() * &beta;
    let rms = (resid.norm_squared() / n as f64).sqrt();
    if !(rms > 0.0) {
        return Err(MvrError::PerfectFit);
    }
    let mut gamma = DVector::zeros(data.k());
    gamma[0] = rms;
    let theta = ThetaEstimate::new(beta, gamma, ScaleFamily::Linear);
    let mut fit = assemble_fit(data, theta, DVector::from_element(n, rms), ones, EstimatorTag::Ols);
    fit.loss = rms;
    Ok(fit)
}

/// Weighted least squares with weights `1/σ_i²` for a known scale `σ`.
pub fn gls_oracle(data: &Dataset, sigma: &DVector<f64>) -> Result<FitResult> {
    check_sigma(data, sigma)?;
    let weights = sigma.map(|s| 1.0 / (s * s));
    let beta = weighted_least_squares(data.x(), data.y(), &weights)?;
    let theta = ThetaEstimate::new(beta, DVector::zeros(data.k()), ScaleFamily::Linear);
    Ok(assemble_fit(data, theta, sigma.clone(), weights, EstimatorTag::GlsOracle))
}

pub(crate) fn check_sigma(data: &Dataset, sigma: &DVector<f64>) -> Result<()> {
    if sigma.len() != data.n() {
        return Err(MvrError::DimensionMismatch(format!(
            "sigma has length {}, data has n = {}",
            sigma.len(),
            data.n()
        )));
    }
    match sigma.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
        Some(index) => Err(MvrError::NonPositiveSigma { index }),
        None => Ok(()),
    }
}

/// Average Gaussian log density `n⁻¹ Σ [−½ log 2π − log s_i − ½ e_i²]` with
/// `s_i` the fitted scale and `e_i` the standardized residual.
pub fn gaussian_pseudo_loglik(fit: &FitResult) -> f64 {
    let n = fit.fitted_scale.len() as f64;
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    fit.fitted_scale
        .iter()
        .zip(fit.residuals_std.iter())
        .map(|(s, e)| -half_log_2pi - s.ln() - 0.5 * e * e)
        .sum::<f64>()
        / n
}

/// `n⁻¹ Σ (y_i − x_i'β̂)² / s_i`.
pub fn weighted_mse(data: &Dataset, fit: &FitResult) -> f64 {
    let resid = fit.residuals(data);
    resid.iter().zip(fit.fitted_scale.iter()).map(|(u, s)| u * u / s).sum::<f64>() / data.n() as f64
}

/// Sample counterpart of the condition under which the MVR Gaussian
/// pseudo-likelihood dominates the OLS one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoglikBound {
    /// `n⁻¹ Σ ê_i²` at the MVR fit.
    pub mean_e2: f64,
    /// `ε̂ = n⁻¹ Σ log(σ̂²_LS / s_i²)`.
    pub epsilon: f64,
}

impl LoglikBound {
    pub fn holds(&self) -> bool {
        self.mean_e2 <= 1.0 + self.epsilon
    }
}

/// Evaluates the bound for an MVR fit against the OLS fit on the same data.
/// When it holds, the MVR average log density is at least the OLS one: the
/// two differ by exactly `½(1 + ε̂ − mean ê²)`.
pub fn loglik_bound(mvr: &FitResult, ols: &FitResult) -> LoglikBound {
    let n = mvr.fitted_scale.len() as f64;
    let sigma_ls = ols.fitted_scale[0];
    let mean_e2 = mvr.residuals_std.norm_squared() / n;
    let epsilon = mvr.fitted_scale.iter().map(|s| (sigma_ls * sigma_ls / (s * s)).ln()).sum::<f64>() / n;
    LoglikBound { mean_e2, epsilon }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    use crate::rng::Rng;

    fn random_data(n: usize, k: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let reg = DMatrix::from_fn(n, k - 1, |_, _| rng.standard_normal());
        let y = DVector::from_fn(n, |i, _| {
            let idx: f64 = (0..k - 1).map(|j| reg[(i, j)]).sum();
            1.0 + idx + (0.3 * reg[(i, 0)]).exp() * rng.standard_normal()
        });
        let names = (1..k).map(|j| format!("x{j}")).collect();
        Dataset::with_intercept(y, reg, names).unwrap()
    }

    #[test]
    fn ols_two_points() {
        let d = Dataset::new(DVector::from_vec(vec![0.0, 2.0]), DMatrix::from_element(2, 1, 1.0), vec!["c".into()])
            .unwrap();
        let fit = fit_ols(&d).unwrap();
        assert!((fit.beta()[0] - 1.0).abs() < 1e-15);
        assert!((fit.fitted_scale[0] - 1.0).abs() < 1e-15);
        assert!((fit.loss - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ols_standardized_residual_moments() {
        let d = random_data(50, 3, 1);
        let fit = fit_ols(&d).unwrap();
        let e = &fit.residuals_std;
        assert!(e.mean().abs() < 1e-12);
        assert!((e.norm_squared() / 50.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_matches_normal_equations() {
        let d = random_data(20, 3, 2);
        let fit = fit_ols(&d).unwrap();
        let xtx = d.x().transpose() * d.x();
        let want = xtx.try_inverse().unwrap() * d.x().transpose() * d.y();
        assert!((fit.beta() - want).amax() < 1e-10);
    }

    #[test]
    fn gls_constant_sigma_is_ols() {
        let d = random_data(30, 2, 3);
        let g = gls_oracle(&d, &DVector::from_element(30, 2.5)).unwrap();
        let o = fit_ols(&d).unwrap();
        assert!((g.beta() - o.beta()).amax() < 1e-12);
    }

    #[test]
    fn gls_downweights_huge_sigma() {
        let d = random_data(30, 2, 4);
        let mut sigma = DVector::from_element(30, 1.0);
        sigma[7] = 1e8;
        let base = gls_oracle(&d, &sigma).unwrap();
        let mut y = d.y().clone();
        y[7] += 1e3;
        let moved = gls_oracle(&d.with_y(y).unwrap(), &sigma).unwrap();
        assert!((base.beta() - moved.beta()).amax() < 1e-9);
    }

    #[test]
    fn gls_rejects_bad_sigma() {
        let d = random_data(10, 2, 5);
        let mut sigma = DVector::from_element(10, 1.0);
        sigma[3] = 0.0;
        assert_eq!(gls_oracle(&d, &sigma).unwrap_err(), MvrError::NonPositiveSigma { index: 3 });
    }

    #[test]
    fn mvr_fit_is_stationary() {
        let d = random_data(200, 3, 6);
        for fam in [ScaleFamily::Linear, ScaleFamily::Exponential] {
            let fit = fit_mvr(&d, fam, &SolverOptions::default()).unwrap();
            assert!(fit.converged);
            assert!(fit.grad_norm <= 1e-8 * fit.loss.max(1.0));
            assert_eq!(fit.estimator_tag, EstimatorTag::Mvr);
            assert!(fit.fitted_scale.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn loglik_gap_identity() {
        let d = random_data(100, 3, 8);
        let ols = fit_ols(&d).unwrap();
        let mvr = fit_mvr(&d, ScaleFamily::Exponential, &SolverOptions::default()).unwrap();
        let b = loglik_bound(&mvr, &ols);
        let gap = gaussian_pseudo_loglik(&mvr) - gaussian_pseudo_loglik(&ols);
        assert!((gap - 0.5 * (1.0 + b.epsilon - b.mean_e2)).abs() < 1e-12);
    }
}
