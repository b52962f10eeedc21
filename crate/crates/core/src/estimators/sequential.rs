//! Two-step estimator with a known scale `σ_i`:
//!
//! 1. `β̃ = argmin Σ (y_i − x_i'β)² / σ_i`;
//! 2. `γ̃ = argmin Σ {(y_i − x_i'β̃)² − s(x_i'γ)²}² / σ_i³`.
//!
//! Under correct specification with `σ_i = s(x_i'γ₀)` it solves the same
//! population moment conditions as MVR, so it serves as a test oracle.

use nalgebra::{DMatrix, DVector};

use super::check_sigma;
use crate::error::{MvrError, Result};
use crate::linalg::{levenberg_solve, weighted_least_squares};
use crate::objective::scale_at;
use crate::scale::ScaleFamily;
use crate::solver::{initialize, SolverOptions};
use crate::types::{gamma_is_feasible, Dataset};

const MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialFit {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub iterations: usize,
    /// Max-norm of the step-two gradient at `γ̃`.
    pub grad_norm: f64,
}

struct StepTwo {
    obj: f64,
    grad: DVector<f64>,
    gn: DMatrix<f64>,
}

fn step_two(
    data: &Dataset,
    family: ScaleFamily,
    r2: &DVector<f64>,
    sigma: &DVector<f64>,
    gamma: &DVector<f64>,
) -> Result<StepTwo> {
    let (n, k) = (data.n(), data.k());
    let t = data.index(gamma);
    let mut obj = 0.0;
    let mut grad = DVector::zeros(k);
    let mut gn = DMatrix::zeros(k, k);
    for i in 0..n {
        let sc = scale_at(family, t[i])?;
        let w = sigma[i].powi(-3);
        let f = r2[i] - sc.s * sc.s;
        obj += w * f * f;
        let row = data.x().row(i);
        // d f / dγ = −2 s s₁ x
        let dj = -2.0 * sc.s * sc.s1;
        for a in 0..k {
            grad[a] += 2.0 * w * f * dj * row[a];
            for b in 0..=a {
                gn[(a, b)] += 2.0 * w * dj * dj * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gn[(b, a)] = gn[(a, b)];
        }
    }
    let inv_n = 1.0 / n as f64;
    Ok(StepTwo { obj: obj * inv_n, grad: grad * inv_n, gn: gn * inv_n })
}

pub fn sequential_oracle(
    data: &Dataset,
    family: ScaleFamily,
    sigma: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<SequentialFit> {
    check_sigma(data, sigma)?;
    opts.validate()?;
    let weights = sigma.map(|s| 1.0 / s);
    let beta = weighted_least_squares(data.x(), data.y(), &weights)?;
    let resid = data.y() - data.x() * &beta;
    let r2 = resid.map(|u| u * u);

    let mut gamma = initialize(data, family)?.gamma;
    let margin = opts.feasibility_margin;
    let mut cur = step_two(data, family, &r2, sigma, &gamma)?;
    for iter in 0..MAX_ITER {
        let gnorm = cur.grad.amax();
        if gnorm <= opts.grad_tol * cur.obj.max(1.0) {
            return Ok(SequentialFit { beta, gamma, iterations: iter, grad_norm: gnorm });
        }
        let (dir, _) = levenberg_solve(&cur.gn, &(-&cur.grad))
            .ok_or_else(|| MvrError::Solver("Gauss-Newton system could not be factorised".into()))?;
        let slope = cur.grad.dot(&dir);
        // The predicted decrease is below what the objective can resolve.
        if -slope <= 1e-14 * cur.obj.max(f64::MIN_POSITIVE) {
            return Ok(SequentialFit { beta, gamma, iterations: iter, grad_norm: gnorm });
        }
        let mut step: f64 = 1.0;
        if family.is_constrained() {
            let t = data.index(&gamma);
            let dt = data.index(&dir);
            for i in 0..data.n() {
                if dt[i] < 0.0 {
                    step = step.min(0.99 * (t[i] - margin) / -dt[i]);
                }
            }
        }
        let mut accepted = None;
        while step >= 1e-14 {
            let trial = &gamma + &dir * step;
            if gamma_is_feasible(family, &trial, data, margin) {
                if let Ok(next) = step_two(data, family, &r2, sigma, &trial) {
                    if next.obj <= cur.obj + opts.armijo_c * step * slope {
                        accepted = Some((trial, next));
                        break;
                    }
                }
            }
            step *= opts.backtrack_factor;
        }
        match accepted {
            Some((g, next)) => {
                gamma = g;
                cur = next;
            }
            None => return Err(MvrError::Solver("sequential oracle line search failed".into())),
        }
    }
    Err(MvrError::Solver(format!("sequential oracle did not converge in {MAX_ITER} iterations")))
}
