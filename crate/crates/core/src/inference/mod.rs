//! Sandwich covariance estimation, standard errors, confidence intervals and
//! Wald tests.

pub mod distributions;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MvrError, Result};
use crate::linalg::{symmetric_inverse, symmetrize_lower, xtwx};
use crate::objective::scale_at;
use crate::types::{has_full_column_rank, Dataset, EstimatorTag, FitResult};

pub use distributions::{chi2_sf, normal_cdf, normal_quantile, student_t_quantile};

/// Relative eigenvalue cutoff below which `Ĝ` counts as singular.
pub const G_INVERSE_CUTOFF: f64 = 1e-12;

/// Which simplification of the asymptotic covariance is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VcovRegime {
    /// No restriction; valid under misspecification of mean and scale.
    General,
    /// Linear conditional mean: the off-diagonal blocks of `G` vanish.
    CorrectMean,
    /// Linear mean and correctly specified scale.
    CorrectMeanVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SandwichOptions {
    /// Small-sample adjustment of `Ŝ`. Not available; requesting it errors.
    pub finite_sample_correction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichVcov {
    pub g_hat: DMatrix<f64>,
    pub s_hat: DMatrix<f64>,
    /// `Ĝ⁻¹ŜĜ⁻¹`; the covariance of `θ̂` is `v_hat / n`.
    pub v_hat: DMatrix<f64>,
    pub regime: VcovRegime,
}

impl SandwichVcov {
    pub fn covariance(&self, n: usize) -> DMatrix<f64> {
        &self.v_hat / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

pub fn sandwich(data: &Dataset, fit: &FitResult, regime: VcovRegime) -> Result<SandwichVcov> {
    sandwich_with(data, fit, regime, SandwichOptions::default())
}

pub fn sandwich_with(
    data: &Dataset,
    fit: &FitResult,
    regime: VcovRegime,
    opts: SandwichOptions,
) -> Result<SandwichVcov> {
    if opts.finite_sample_correction {
        return Err(MvrError::NotImplemented("finite-sample sandwich correction"));
    }
    if !matches!(fit.estimator_tag, EstimatorTag::Mvr | EstimatorTag::Ols) {
        return Err(MvrError::BadArgument(format!(
            "sandwich needs an MVR or OLS fit, got {:?}",
            fit.estimator_tag
        )));
    }
    let theta = &fit.theta;
    theta.check_dims(data)?;
    let (n, k) = (data.n(), data.k());
    let x = data.x();
    let t = data.index(&theta.gamma);
    let mean = x * &theta.beta;

    let mut blocks = [(); 6].map(|_| DMatrix::<f64>::zeros(k, k));
    for i in 0..n {
        let sc = scale_at(theta.scale, t[i])?;
        let e = (data.y()[i] - mean[i]) / sc.s;
        let e2 = e * e;
        let (g11, g12, g22) = match regime {
            VcovRegime::General => (1.0 / sc.s, sc.s1 * e / sc.s, (sc.s1 * e).powi(2) / sc.s - 0.5 * sc.s2 * (e2 - 1.0)),
            VcovRegime::CorrectMean => (1.0 / sc.s, 0.0, (sc.s1 * e).powi(2) / sc.s - 0.5 * sc.s2 * (e2 - 1.0)),
            VcovRegime::CorrectMeanVariance => (1.0 / sc.s, 0.0, sc.s1 * sc.s1 / sc.s),
        };
        let (s11, s12, s22) = match regime {
            VcovRegime::General => (e2, 0.5 * sc.s1 * e * (e2 - 1.0), 0.25 * (sc.s1 * (e2 - 1.0)).powi(2)),
            VcovRegime::CorrectMean => (e2, 0.5 * sc.s1 * e * e2, 0.25 * (sc.s1 * (e2 - 1.0)).powi(2)),
            VcovRegime::CorrectMeanVariance => {
                (1.0, 0.5 * sc.s1 * e * e2, 0.25 * sc.s1 * sc.s1 * (e2 * e2 - 1.0))
            }
        };
        let w = [g11, g12, g22, s11, s12, s22];
        let row = x.row(i);
        for a in 0..k {
            for b in 0..=a {
                let xx = row[a] * row[b];
                for (m, wi) in blocks.iter_mut().zip(w) {
                    m[(a, b)] += wi * xx;
                }
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for m in blocks.iter_mut() {
        symmetrize_lower(m);
        *m *= inv_n;
    }
    let g_hat = stack_blocks(&blocks[0], &blocks[1], &blocks[2]);
    let s_hat = stack_blocks(&blocks[3], &blocks[4], &blocks[5]);
    let g_inv = symmetric_inverse(&g_hat, G_INVERSE_CUTOFF).ok_or(MvrError::SingularG)?;
    let mut v_hat = &g_inv * &s_hat * &g_inv;
    v_hat = (&v_hat + v_hat.transpose()) * 0.5;
    Ok(SandwichVcov { g_hat, s_hat, v_hat, regime })
}

fn stack_blocks(a11: &DMatrix<f64>, a12: &DMatrix<f64>, a22: &DMatrix<f64>) -> DMatrix<f64> {
    let k = a11.nrows();
    let mut out = DMatrix::zeros(2 * k, 2 * k);
    out.view_mut((0, 0), (k, k)).copy_from(a11);
    out.view_mut((0, k), (k, k)).copy_from(a12);
    out.view_mut((k, 0), (k, k)).copy_from(&a12.transpose());
    out.view_mut((k, k), (k, k)).copy_from(a22);
    out
}

/// Square roots of the diagonal of `v_hat / n`, split into `(β, γ)` parts.
pub fn std_errors(vcov: &SandwichVcov, n: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    let se = diag_sqrt(&vcov.covariance(n))?;
    let k = se.len() / 2;
    Ok((se.rows(0, k).into_owned(), se.rows(k, k).into_owned()))
}

pub(crate) fn diag_sqrt(cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(cov.nrows());
    for j in 0..cov.nrows() {
        let v = cov[(j, j)];
        if !(v >= 0.0) {
            return Err(MvrError::NegativeDiagonal { index: j, value: v });
        }
        out[j] = v.sqrt();
    }
    Ok(out)
}

/// Reference distribution for t ratios and interval half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalValues {
    Normal,
    /// Student t with `n − k` degrees of freedom.
    StudentT { df: usize },
}

impl CriticalValues {
    /// Two-sided critical value for confidence `level`.
    pub fn two_sided(self, level: f64) -> Result<f64> {
        check_level(level)?;
        let p = 0.5 * (1.0 + level);
        match self {
            CriticalValues::Normal => normal_quantile(p),
            CriticalValues::StudentT { df } => student_t_quantile(p, df as f64),
        }
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(MvrError::BadLevel(level))
    }
}

/// `estimate ∓ Φ⁻¹((1 + level)/2)·se`.
pub fn conf_interval(estimate: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if !(se >= 0.0) {
        return Err(MvrError::BadArgument(format!("standard error must be >= 0, got {se}")));
    }
    let z = CriticalValues::Normal.two_sided(level)?;
    Ok((estimate - z * se, estimate + z * se))
}

/// `W = (Rθ̂ − r)'[R (V̂/n) R']⁻¹(Rθ̂ − r)` against `χ²_h`.
pub fn wald_test(
    fit: &FitResult,
    vcov: &SandwichVcov,
    n: usize,
    r_mat: &DMatrix<f64>,
    r_vec: &DVector<f64>,
) -> Result<WaldResult> {
    let theta = fit.theta.stacked();
    let h = r_mat.nrows();
    if r_mat.ncols() != theta.len() || r_vec.len() != h || vcov.v_hat.nrows() != theta.len() {
        return Err(MvrError::DimensionMismatch(format!(
            "R is {}x{}, r has length {}, theta has length {}",
            h,
            r_mat.ncols(),
            r_vec.len(),
            theta.len()
        )));
    }
    if h == 0 || h > theta.len() || !has_full_column_rank(&r_mat.transpose()) {
        return Err(MvrError::RankDeficientR);
    }
    let diff = r_mat * &theta - r_vec;
    let middle = r_mat * vcov.covariance(n) * r_mat.transpose();
    let inv = symmetric_inverse(&middle, 1e-14).ok_or(MvrError::SingularMiddleMatrix)?;
    let statistic = (diff.transpose() * inv * &diff)[(0, 0)].max(0.0);
    Ok(WaldResult { statistic, df: h, p_value: chi2_sf(statistic, h)? })
}

/// Joint test that all non-intercept components of `γ` are zero.
pub fn het_test(fit: &FitResult, vcov: &SandwichVcov, n: usize) -> Result<WaldResult> {
    let k = fit.theta.k();
    if k < 2 {
        return Err(MvrError::InterceptOnly);
    }
    let mut r_mat = DMatrix::zeros(k - 1, 2 * k);
    for j in 0..k - 1 {
        r_mat[(j, k + 1 + j)] = 1.0;
    }
    wald_test(fit, vcov, n, &r_mat, &DVector::zeros(k - 1))
}

/// `(X'Ω⁻¹X)⁻¹ (X'Ψ̂X) (X'Ω⁻¹X)⁻¹` with `Ω = diag(s_i)` and `Ψ̂ = diag(ê_i²)`.
///
/// Normalised as the `β` block of the correct-mean sandwich divided by `n`.
pub fn closed_form_beta_vcov(data: &Dataset, fit: &FitResult) -> Result<DMatrix<f64>> {
    let omega_inv = fit.fitted_scale.map(|s| 1.0 / s);
    let bread = xtwx(data.x(), &omega_inv);
    let meat = xtwx(data.x(), &fit.residuals_std.map(|e| e * e));
    let inv = symmetric_inverse(&bread, G_INVERSE_CUTOFF).ok_or(MvrError::SingularG)?;
    Ok(&inv * meat * &inv)
}

/// Heteroskedasticity-robust (HC0) covariance of a weighted least-squares
/// `β̂`: `A⁻¹ B A⁻¹` with `A = X'WX` and `B = Σ w_i² û_i² x_i x_i'`. With unit
/// weights this is the usual OLS HC0 estimator.
pub fn robust_beta_vcov(data: &Dataset, fit: &FitResult) -> Result<DMatrix<f64>> {
    let resid = fit.residuals(data);
    let a = xtwx(data.x(), &fit.weights);
    let b = xtwx(data.x(), &DVector::from_fn(data.n(), |i, _| (fit.weights[i] * resid[i]).powi(2)));
    let inv = symmetric_inverse(&a, G_INVERSE_CUTOFF).ok_or(MvrError::SingularG)?;
    Ok(&inv * b * &inv)
}

/// Robust standard errors of `β̂` from `robust_beta_vcov`.
pub fn robust_std_errors(data: &Dataset, fit: &FitResult) -> Result<DVector<f64>> {
    diag_sqrt(&robust_beta_vcov(data, fit)?)
}
