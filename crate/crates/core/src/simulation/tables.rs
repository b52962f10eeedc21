use serde::{Deserialize, Serialize};

use super::experiment::{EstimatorKind, ExperimentResult};
use crate::error::{MvrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Rmse,
    CiLength,
}

/// Cell `(i, j)` holds the value at `ns[i]`, `alphas[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioTable {
    pub metric: Metric,
    pub estimator: EstimatorKind,
    pub baseline: EstimatorKind,
    pub ns: Vec<usize>,
    pub alphas: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl RatioTable {
    pub fn value(&self, n: usize, alpha: f64) -> Option<f64> {
        let i = self.ns.iter().position(|&m| m == n)?;
        let j = self.alphas.iter().position(|&a| a == alpha)?;
        Some(self.values[i][j])
    }

    /// Tab-separated rendering with values to one decimal. `caption` is
    /// written as a leading `#` comment line.
    pub fn to_tsv(&self, caption: &str) -> String {
        let mut out = format!("# {caption}\nn");
        for a in &self.alphas {
            out.push_str(&format!("\talpha={a}"));
        }
        out.push('\n');
        for (n, row) in self.ns.iter().zip(&self.values) {
            out.push_str(&n.to_string());
            for v in row {
                out.push_str(&format!("\t{v:.1}"));
            }
            out.push('\n');
        }
        out
    }
}

fn axes(results: &[ExperimentResult]) -> (Vec<usize>, Vec<f64>) {
    let mut ns: Vec<usize> = results.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut alphas: Vec<f64> = results.iter().map(|r| r.alpha).collect();
    alphas.sort_by(|a, b| a.total_cmp(b));
    alphas.dedup();
    (ns, alphas)
}

fn cell(results: &[ExperimentResult], n: usize, alpha: f64) -> Result<&ExperimentResult> {
    results
        .iter()
        .find(|r| r.n == n && r.alpha == alpha)
        .ok_or_else(|| MvrError::IncompleteGrid(format!("missing cell n = {n}, alpha = {alpha}")))
}

fn metric_of(r: &ExperimentResult, kind: EstimatorKind, metric: Metric) -> Result<f64> {
    let m = r.get(kind).ok_or_else(|| {
        MvrError::IncompleteGrid(format!("{} missing at n = {}, alpha = {}", kind.name(), r.n, r.alpha))
    })?;
    if r.used == 0 {
        return Err(MvrError::IncompleteGrid(format!("no usable replications at n = {}, alpha = {}", r.n, r.alpha)));
    }
    Ok(match metric {
        Metric::Rmse => m.rmse,
        Metric::CiLength => m.mean_ci_length,
    })
}

/// `100 · metric(estimator) / metric(baseline)` over the full `(n, α)` grid.
pub fn ratio_table(
    results: &[ExperimentResult],
    metric: Metric,
    estimator: EstimatorKind,
    baseline: EstimatorKind,
) -> Result<RatioTable> {
    let (ns, alphas) = axes(results);
    if ns.is_empty() {
        return Err(MvrError::IncompleteGrid("no results".into()));
    }
    let mut values = Vec::with_capacity(ns.len());
    for &n in &ns {
        let mut row = Vec::with_capacity(alphas.len());
        for &a in &alphas {
            let r = cell(results, n, a)?;
            row.push(100.0 * metric_of(r, estimator, metric)? / metric_of(r, baseline, metric)?);
        }
        values.push(row);
    }
    Ok(RatioTable { metric, estimator, baseline, ns, alphas, values })
}

/// Rejection frequency as a function of `α`, one series per `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    pub estimator: EstimatorKind,
    pub alphas: Vec<f64>,
    /// `(n, rates over alphas)`.
    pub series: Vec<(usize, Vec<f64>)>,
}

impl RejectionCurve {
    pub fn to_tsv(&self, caption: &str) -> String {
        let mut out = format!("# {caption}\nalpha");
        for (n, _) in &self.series {
            out.push_str(&format!("\tn={n}"));
        }
        out.push('\n');
        for (j, a) in self.alphas.iter().enumerate() {
            out.push_str(&a.to_string());
            for (_, rates) in &self.series {
                out.push_str(&format!("\t{:.4}", rates[j]));
            }
            out.push('\n');
        }
        out
    }
}

pub fn rejection_curve(results: &[ExperimentResult], estimator: EstimatorKind) -> Result<RejectionCurve> {
    let (ns, alphas) = axes(results);
    if ns.is_empty() {
        return Err(MvrError::IncompleteGrid("no results".into()));
    }
    let mut series = Vec::with_capacity(ns.len());
    for &n in &ns {
        let mut rates = Vec::with_capacity(alphas.len());
        for &a in &alphas {
            let r = cell(results, n, a)?;
            let m = r.get(estimator).ok_or_else(|| {
                MvrError::IncompleteGrid(format!("{} missing at n = {n}, alpha = {a}", estimator.name()))
            })?;
            rates.push(m.rejection_rate);
        }
        series.push((n, rates));
    }
    Ok(RejectionCurve { estimator, alphas, series })
}
