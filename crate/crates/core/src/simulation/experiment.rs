use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{gen_sample, DgpConfig};
use crate::error::{MvrError, Result};
use crate::estimators::{fit_mvr, fit_ols, fit_wls, gls_oracle, WlsVariant};
use crate::inference::{het_test, robust_std_errors, sandwich, std_errors, CriticalValues, VcovRegime};
use crate::rng::Rng;
use crate::scale::ScaleFamily;
use crate::solver::SolverOptions;
use crate::types::{Dataset, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    MvrLinear,
    MvrExp,
    Ols,
    WlsLinear,
    WlsExp,
    GlsOracle,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::MvrLinear,
        EstimatorKind::MvrExp,
        EstimatorKind::Ols,
        EstimatorKind::WlsLinear,
        EstimatorKind::WlsExp,
        EstimatorKind::GlsOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::MvrLinear => "l-MVR",
            EstimatorKind::MvrExp => "e-MVR",
            EstimatorKind::Ols => "OLS",
            EstimatorKind::WlsLinear => "l-WLS",
            EstimatorKind::WlsExp => "e-WLS",
            EstimatorKind::GlsOracle => "GLS-oracle",
        }
    }

    pub fn is_mvr(self) -> bool {
        matches!(self, EstimatorKind::MvrLinear | EstimatorKind::MvrExp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalKind {
    Normal,
    /// Student t with `n − k` degrees of freedom.
    StudentT,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dgp: DgpConfig,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub nominal_level: f64,
    pub target_coefficient: usize,
    pub null_value: f64,
    pub critical: CriticalKind,
    pub solver: SolverOptions,
}

impl ExperimentConfig {
    pub const DEFAULT_REPLICATIONS: usize = 2000;

    pub fn new(dgp: DgpConfig, replications: usize, seed: u64, estimators: Vec<EstimatorKind>) -> Self {
        Self {
            dgp,
            replications,
            seed,
            estimators,
            nominal_level: 0.05,
            target_coefficient: 4,
            null_value: 1.0,
            critical: CriticalKind::Normal,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.replications == 0 {
            return Err(MvrError::Config("replications must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(MvrError::Config("no estimators requested".into()));
        }
        if !(self.nominal_level > 0.0 && self.nominal_level < 1.0) {
            return Err(MvrError::Config(format!("nominal level must lie in (0, 1), got {}", self.nominal_level)));
        }
        if self.target_coefficient >= self.dgp.k() {
            return Err(MvrError::Config(format!(
                "target coefficient {} out of range for k = {}",
                self.target_coefficient,
                self.dgp.k()
            )));
        }
        self.solver.validate().map_err(|e| MvrError::Config(e.to_string()))
    }

    fn critical_value(&self) -> Result<f64> {
        let dist = match self.critical {
            CriticalKind::Normal => CriticalValues::Normal,
            CriticalKind::StudentT => CriticalValues::StudentT { df: self.dgp.n - self.dgp.k() },
        };
        dist.two_sided(1.0 - self.nominal_level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub rmse: f64,
    pub rejection_rate: f64,
    pub mean_ci_length: f64,
    pub coverage: f64,
    /// Replications in which this estimator itself failed.
    pub failure_count: usize,
    pub mean_estimate: f64,
    /// Monte Carlo standard deviation of the estimates.
    pub sd_estimate: f64,
    pub mean_se: f64,
    /// Rejection rate of the heteroskedasticity test (MVR only).
    pub het_rejection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub n: usize,
    pub alpha: f64,
    pub replications: usize,
    /// Replications kept after dropping every replication where some
    /// estimator failed.
    pub used: usize,
    pub dropped: usize,
    pub metrics: BTreeMap<EstimatorKind, EstimatorMetrics>,
}

impl ExperimentResult {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorMetrics> {
        self.metrics.get(&kind)
    }
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    estimate: f64,
    se: f64,
    het_reject: Option<bool>,
}

fn fit_kind(
    kind: EstimatorKind,
    data: &Dataset,
    sigma: &nalgebra::DVector<f64>,
    cfg: &ExperimentConfig,
) -> Result<(FitResult, f64, Option<bool>)> {
    let j = cfg.target_coefficient;
    match kind {
        EstimatorKind::MvrLinear | EstimatorKind::MvrExp => {
            let family = if kind == EstimatorKind::MvrLinear { ScaleFamily::Linear } else { ScaleFamily::Exponential };
            let fit = fit_mvr(data, family, &cfg.solver)?;
            if !(fit.converged || fit.on_boundary) {
                return Err(MvrError::Solver("MVR fit did not converge".into()));
            }
            let vcov = sandwich(data, &fit, VcovRegime::General)?;
            let (se, _) = std_errors(&vcov, data.n())?;
            let het = het_test(&fit, &vcov, data.n())?;
            let se_j = se[j];
            Ok((fit, se_j, Some(het.p_value < cfg.nominal_level)))
        }
        _ => {
            let fit = match kind {
                EstimatorKind::Ols => fit_ols(data)?,
                EstimatorKind::WlsLinear => fit_wls(data, WlsVariant::linear())?,
                EstimatorKind::WlsExp => fit_wls(data, WlsVariant::exponential())?,
                _ => gls_oracle(data, sigma)?,
            };
            let se = robust_std_errors(data, &fit)?;
            Ok((fit, se[j], None))
        }
    }
}

fn replicate(cfg: &ExperimentConfig, r: usize) -> Result<Vec<Option<Draw>>> {
    let mut rng = Rng::with_stream(cfg.seed, r as u64);
    let (data, sigma) = gen_sample(&cfg.dgp, &mut rng)?;
    Ok(cfg
        .estimators
        .iter()
        .map(|&kind| {
            fit_kind(kind, &data, &sigma, cfg).ok().and_then(|(fit, se, het)| {
                let estimate = fit.beta()[cfg.target_coefficient];
                (estimate.is_finite() && se.is_finite()).then_some(Draw { estimate, se, het_reject: het })
            })
        })
        .collect())
}

/// Runs every replication (in parallel) and aggregates in replication order,
/// so the result does not depend on the number of threads.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let crit = cfg.critical_value()?;
    let draws: Vec<Vec<Option<Draw>>> =
        (0..cfg.replications).into_par_iter().map(|r| replicate(cfg, r)).collect::<Result<_>>()?;

    let m = cfg.estimators.len();
    let failures: Vec<usize> = (0..m).map(|e| draws.iter().filter(|d| d[e].is_none()).count()).collect();
    let kept: Vec<Vec<Draw>> =
        draws.into_iter().filter_map(|d| d.into_iter().collect::<Option<Vec<Draw>>>()).collect();
    let used = kept.len();
    let truth = cfg.dgp.beta[cfg.target_coefficient];

    let mut metrics = BTreeMap::new();
    for (e, &kind) in cfg.estimators.iter().enumerate() {
        let mut met = EstimatorMetrics { failure_count: failures[e], ..Default::default() };
        if used > 0 {
            let s = used as f64;
            let (mut sq, mut rej, mut len, mut cov, mut sum, mut se_sum, mut het) = (0.0, 0, 0.0, 0, 0.0, 0.0, 0);
            for rep in &kept {
                let d = rep[e];
                sq += (d.estimate - truth).powi(2);
                if ((d.estimate - cfg.null_value) / d.se).abs() > crit {
                    rej += 1;
                }
                len += 2.0 * crit * d.se;
                if (d.estimate - truth).abs() <= crit * d.se {
                    cov += 1;
                }
                sum += d.estimate;
                se_sum += d.se;
                if d.het_reject == Some(true) {
                    het += 1;
                }
            }
            let mean = sum / s;
            let var = kept.iter().map(|rep| (rep[e].estimate - mean).powi(2)).sum::<f64>() / s;
            met.rmse = (sq / s).sqrt();
            met.rejection_rate = rej as f64 / s;
            met.mean_ci_length = len / s;
            met.coverage = cov as f64 / s;
            met.mean_estimate = mean;
            met.sd_estimate = var.sqrt();
            met.mean_se = se_sum / s;
            met.het_rejection_rate = kind.is_mvr().then_some(het as f64 / s);
        }
        metrics.insert(kind, met);
    }
    Ok(ExperimentResult {
        n: cfg.dgp.n,
        alpha: cfg.dgp.alpha,
        replications: cfg.replications,
        used,
        dropped: cfg.replications - used,
        metrics,
    })
}

/// Runs the full `(n, α)` grid; `z(α)` is computed once per `α`.
pub fn run_grid(
    ns: &[usize],
    alphas: &[f64],
    replications: usize,
    seed: u64,
    estimators: &[EstimatorKind],
) -> Result<Vec<ExperimentResult>> {
    let mut out = Vec::with_capacity(ns.len() * alphas.len());
    for &alpha in alphas {
        let base = DgpConfig::new(ns.iter().copied().max().unwrap_or(10).max(10), alpha)?;
        for &n in ns {
            let dgp = DgpConfig { n, ..base.clone() };
            let cfg = ExperimentConfig::new(dgp, replications, seed, estimators.to_vec());
            out.push(run_experiment(&cfg)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_self_consistent() {
        let dgp = DgpConfig::new(40, 1.0).unwrap();
        let cfg = ExperimentConfig::new(dgp, 30, 3, vec![EstimatorKind::MvrExp, EstimatorKind::Ols]);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| run_experiment(&cfg).unwrap());
        assert_eq!(a, c);
        for m in a.metrics.values() {
            assert!((0.0..=1.0).contains(&m.rejection_rate));
            assert!((0.0..=1.0).contains(&m.coverage));
            assert!(m.rmse >= 0.0);
        }
        assert_eq!(a.used + a.dropped, 30);
    }

    #[test]
    fn single_replication_rates_are_binary() {
        let dgp = DgpConfig::new(30, 0.0).unwrap();
        let cfg = ExperimentConfig::new(dgp, 1, 1, vec![EstimatorKind::Ols]);
        let r = run_experiment(&cfg).unwrap();
        let m = r.get(EstimatorKind::Ols).unwrap();
        assert!(m.rejection_rate == 0.0 || m.rejection_rate == 1.0);
    }

    #[test]
    fn config_errors() {
        let dgp = DgpConfig::new(30, 0.0).unwrap();
        let mut cfg = ExperimentConfig::new(dgp, 0, 1, vec![EstimatorKind::Ols]);
        assert!(matches!(run_experiment(&cfg), Err(MvrError::Config(_))));
        cfg.replications = 1;
        cfg.target_coefficient = 9;
        assert!(matches!(run_experiment(&cfg), Err(MvrError::Config(_))));
    }

    #[test]
    fn t_critical_values_widen_intervals() {
        let dgp = DgpConfig::new(20, 0.0).unwrap();
        let mut cfg = ExperimentConfig::new(dgp, 20, 2, vec![EstimatorKind::Ols]);
        let normal = run_experiment(&cfg).unwrap();
        cfg.critical = CriticalKind::StudentT;
        let t = run_experiment(&cfg).unwrap();
        let k = EstimatorKind::Ols;
        assert!(t.get(k).unwrap().mean_ci_length > normal.get(k).unwrap().mean_ci_length);
    }
}
