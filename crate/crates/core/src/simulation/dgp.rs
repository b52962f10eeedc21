//! Heteroskedastic linear design with log-normal regressors:
//!
//! ```text
//! Y = β₀ + Σ_j X_j β_j + σ ε,   σ = z(α) (γ₀ + Σ_j X_j γ_j)^α,
//! X_j = exp(Z_j),  Z_j, ε iid N(0, 1).
//! ```
//!
//! `z(α)` normalises `E[σ²]` to one.

use nalgebra::{DMatrix, DVector};

use crate::error::{MvrError, Result};
use crate::rng::Rng;
use crate::types::Dataset;

pub const DEFAULT_REGRESSORS: usize = 4;
/// Calibration draws used when `z(α)` has no closed form.
pub const DEFAULT_CALIBRATION_DRAWS: usize = 10_000_000;
pub const CALIBRATION_SEED: u64 = 0x5eed_ca1b;

#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub n: usize,
    pub alpha: f64,
    pub k_minus_1: usize,
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub z_alpha: f64,
}

impl DgpConfig {
    /// Default design (four regressors, all coefficients one) with `z(α)`
    /// from `z_for`.
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let k = DEFAULT_REGRESSORS + 1;
        let gamma = DVector::from_element(k, 1.0);
        let z_alpha = z_for(alpha, &gamma)?;
        let cfg = Self { n, alpha, k_minus_1: DEFAULT_REGRESSORS, beta: DVector::from_element(k, 1.0), gamma, z_alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn k(&self) -> usize {
        self.k_minus_1 + 1
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        let k = self.k();
        if self.beta.len() != k || self.gamma.len() != k {
            return Err(MvrError::Config(format!(
                "beta and gamma must have length {k}, got {} and {}",
                self.beta.len(),
                self.gamma.len()
            )));
        }
        if self.n <= k {
            return Err(MvrError::Config(format!("n must exceed k = {k}, got {}", self.n)));
        }
        if self.gamma.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(MvrError::Config("gamma must be strictly positive".into()));
        }
        if !(self.z_alpha > 0.0 && self.z_alpha.is_finite()) {
            return Err(MvrError::Config(format!("z(alpha) must be > 0, got {}", self.z_alpha)));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha >= 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(MvrError::Config(format!("alpha must be finite and >= 0, got {alpha}")))
    }
}

/// `E[(γ₀ + Σ γ_j X_j)^m]` for independent standard log-normal `X_j`, by
/// multinomial expansion with `E[X^a] = exp(a²/2)`.
pub fn index_moment(gamma: &DVector<f64>, m: u32) -> f64 {
    fn rec(gamma: &[f64], j: usize, m: u32) -> f64 {
        if j == gamma.len() {
            return if m == 0 { 1.0 } else { 0.0 };
        }
        let mut total = 0.0;
        let mut binom = 1.0;
        for a in 0..=m {
            let moment = if j == 0 { 1.0 } else { (0.5 * (a * a) as f64).exp() };
            total += binom * gamma[j].powi(a as i32) * moment * rec(gamma, j + 1, m - a);
            binom = binom * (m - a) as f64 / (a + 1) as f64;
        }
        total
    }
    rec(gamma.as_slice(), 0, m)
}

/// Closed-form `z(α)` when `2α` is an integer.
pub fn exact_z(alpha: f64, gamma: &DVector<f64>) -> Option<f64> {
    let m = 2.0 * alpha;
    if m < 0.0 || m.fract() != 0.0 || m > 16.0 {
        return None;
    }
    Some(index_moment(gamma, m as u32).powf(-0.5))
}

/// `z(α)` for the design: closed form when available, otherwise Monte Carlo
/// with `DEFAULT_CALIBRATION_DRAWS` at `CALIBRATION_SEED`.
pub fn z_for(alpha: f64, gamma: &DVector<f64>) -> Result<f64> {
    check_alpha(alpha)?;
    if let Some(z) = exact_z(alpha, gamma) {
        return Ok(z);
    }
    let cal = calibrate_z_with(alpha, gamma, DEFAULT_CALIBRATION_DRAWS, &Rng::new(CALIBRATION_SEED))?;
    Ok(cal.z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZCalibration {
    pub z: f64,
    /// Delta-method standard error of `z`.
    pub se: f64,
}

/// Monte Carlo `z(α)` for the default design (four regressors, `γ = 1`).
pub fn calibrate_z(alpha: f64, draws: usize, rng: &Rng) -> Result<ZCalibration> {
    calibrate_z_with(alpha, &DVector::from_element(DEFAULT_REGRESSORS + 1, 1.0), draws, rng)
}

pub fn calibrate_z_with(alpha: f64, gamma: &DVector<f64>, draws: usize, rng: &Rng) -> Result<ZCalibration> {
    check_alpha(alpha)?;
    if draws < 2 {
        return Err(MvrError::Config(format!("need at least 2 calibration draws, got {draws}")));
    }
    let mut rng = rng.clone();
    // Welford running mean and variance of (γ'X)^{2α}.
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..draws {
        let mut idx = gamma[0];
        for j in 1..gamma.len() {
            idx += gamma[j] * rng.standard_normal().exp();
        }
        let v = idx.powf(2.0 * alpha);
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let se_mean = (m2 / (draws - 1) as f64 / draws as f64).sqrt();
    let z = mean.powf(-0.5);
    Ok(ZCalibration { z, se: 0.5 * mean.powf(-1.5) * se_mean })
}

/// One sample from the design and its true scales `σ_i`.
pub fn gen_sample(cfg: &DgpConfig, rng: &mut Rng) -> Result<(Dataset, DVector<f64>)> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.k_minus_1);
    let mut reg = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut sigma = DVector::zeros(n);
    for i in 0..n {
        let mut mean = cfg.beta[0];
        let mut idx = cfg.gamma[0];
        for j in 0..p {
            let xj = rng.standard_normal().exp();
            reg[(i, j)] = xj;
            mean += cfg.beta[j + 1] * xj;
            idx += cfg.gamma[j + 1] * xj;
        }
        sigma[i] = cfg.z_alpha * idx.powf(cfg.alpha);
        y[i] = mean + sigma[i] * rng.standard_normal();
    }
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    Ok((Dataset::with_intercept(y, reg, names)?, sigma))
}
