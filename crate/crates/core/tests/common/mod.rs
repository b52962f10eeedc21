//! Checks shared by the property, dominance and acceptance targets. Each
//! returns `Ok(summary)` or `Err(first violation)`.
#![allow(dead_code)]

use mvr_core::estimators::{gaussian_pseudo_loglik, loglik_bound, weighted_mse};
use mvr_core::inference::{sandwich, std_errors, wald_test};
use mvr_core::objective::{evaluate, loss};
use mvr_core::solver::{minimize, minimize_from, restricted_minimize};
use mvr_core::{
    fit_mvr, fit_ols, sequential_oracle, Dataset, FitResult, Rng, ScaleFamily, SolverOptions, ThetaEstimate,
    VcovRegime,
};
use nalgebra::{DMatrix, DVector};

pub const FAMILIES: [ScaleFamily; 2] = [ScaleFamily::Linear, ScaleFamily::Exponential];

pub type Check = std::result::Result<String, String>;

/// Regressors uniform on (0, 2), an intercept, and a scale that is either
/// linear or exponential in the regressors with random strength.
pub fn het_dataset(rng: &mut Rng, n: usize, k: usize) -> Dataset {
    let reg = DMatrix::from_fn(n, k - 1, |_, _| 2.0 * rng.uniform());
    let strength = rng.uniform();
    let linear = rng.uniform() < 0.5;
    let y = DVector::from_fn(n, |i, _| {
        let idx: f64 = (0..k - 1).map(|j| reg[(i, j)]).sum::<f64>() / (k - 1) as f64;
        let sigma = if linear { 0.5 + strength * idx } else { (strength * idx).exp() };
        1.0 + idx + sigma * rng.standard_normal()
    });
    let names = (1..k).map(|j| format!("x{j}")).collect();
    Dataset::with_intercept(y, reg, names).unwrap()
}

/// Like `het_dataset` but with a misspecified, nonlinear mean and a scale
/// outside both families.
pub fn misspecified_dataset(rng: &mut Rng, n: usize, k: usize) -> Dataset {
    let reg = DMatrix::from_fn(n, k - 1, |_, _| rng.standard_normal());
    let power = 2.0 * rng.uniform();
    let y = DVector::from_fn(n, |i, _| {
        let a = reg[(i, 0)];
        let sigma = (1.0 + a * a).powf(0.5 * power);
        a + 0.5 * a * a + sigma * rng.standard_normal()
    });
    let names = (1..k).map(|j| format!("x{j}")).collect();
    Dataset::with_intercept(y, reg, names).unwrap()
}

/// A random `θ` that is feasible for `family` on `data`.
pub fn random_theta(rng: &mut Rng, data: &Dataset, family: ScaleFamily) -> ThetaEstimate {
    let k = data.k();
    let beta = DVector::from_fn(k, |_, _| rng.standard_normal());
    let gamma = match family {
        ScaleFamily::Exponential => DVector::from_fn(k, |_, _| 0.4 * rng.standard_normal()),
        ScaleFamily::Linear => loop {
            let g = DVector::from_fn(k, |j, _| if j == 0 { 0.5 + rng.uniform() } else { 0.3 * rng.standard_normal() });
            if data.index(&g).min() > 0.05 {
                break g;
            }
        },
    };
    ThetaEstimate::new(beta, gamma, family)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Central finite differences of the loss against the analytic gradient.
pub fn gradient_matches_finite_differences(cases: usize) -> Check {
    let mut rng = Rng::new(101);
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let family = FAMILIES[c % 2];
        let data = het_dataset(&mut rng, 10 + c % 20, 2 + c % 3);
        let theta = random_theta(&mut rng, &data, family);
        let grad = evaluate(&data, &theta, false).map_err(|e| e.to_string())?.moments.gradient();
        let base = theta.stacked();
        for j in 0..base.len() {
            let h = 1e-6 * base[j].abs().max(1.0);
            let (mut up, mut dn) = (base.clone(), base.clone());
            up[j] += h;
            dn[j] -= h;
            let fu = loss(&data, &ThetaEstimate::from_stacked(&up, family)).map_err(|e| e.to_string())?;
            let fd = loss(&data, &ThetaEstimate::from_stacked(&dn, family)).map_err(|e| e.to_string())?;
            let err = rel((fu - fd) / (2.0 * h), grad[j]);
            worst = worst.max(err);
            if err > 1e-6 {
                return Err(format!("case {c} ({family:?}) coordinate {j}: relative error {err:.2e}"));
            }
        }
    }
    Ok(format!("{cases} cases, worst relative error {worst:.1e}"))
}

/// Analytic Hessian: symmetric, equal to the finite-difference Jacobian of
/// the gradient, and positive definite where convexity applies (every
/// feasible point for the linear scale, around the optimum for the
/// exponential scale).
pub fn hessian_checks(cases: usize) -> Check {
    let mut rng = Rng::new(202);
    let mut min_eig = f64::INFINITY;
    for c in 0..cases {
        let family = FAMILIES[c % 2];
        let data = het_dataset(&mut rng, 30 + c, 2 + c % 3);
        let theta = if family == ScaleFamily::Linear {
            random_theta(&mut rng, &data, family)
        } else {
            let fit = fit_mvr(&data, family, &SolverOptions::default()).map_err(|e| e.to_string())?;
            let mut s = fit.theta.stacked();
            for v in s.iter_mut() {
                *v += 0.01 * rng.standard_normal();
            }
            ThetaEstimate::from_stacked(&s, family)
        };
        let h = evaluate(&data, &theta, true).map_err(|e| e.to_string())?.hessian.unwrap().total;
        let scale = h.amax().max(1.0);
        if (&h - h.transpose()).amax() > 1e-10 * scale {
            return Err(format!("case {c}: Hessian not symmetric"));
        }
        let base = theta.stacked();
        for j in 0..base.len() {
            let step = 1e-6 * base[j].abs().max(1.0);
            let (mut up, mut dn) = (base.clone(), base.clone());
            up[j] += step;
            dn[j] -= step;
            let gu = evaluate(&data, &ThetaEstimate::from_stacked(&up, family), false).unwrap().moments.gradient();
            let gd = evaluate(&data, &ThetaEstimate::from_stacked(&dn, family), false).unwrap().moments.gradient();
            let col = (gu - gd) / (2.0 * step);
            for i in 0..base.len() {
                if (col[i] - h[(i, j)]).abs() > 1e-5 * scale {
                    return Err(format!("case {c} ({family:?}): H[{i},{j}] = {} vs {}", h[(i, j)], col[i]));
                }
            }
        }
        let eig = h.symmetric_eigen().eigenvalues.min();
        min_eig = min_eig.min(eig / scale);
        if !(eig > 0.0) {
            return Err(format!("case {c} ({family:?}): smallest eigenvalue {eig:.3e}"));
        }
    }
    Ok(format!("{cases} points, smallest relative eigenvalue {min_eig:.1e}"))
}

/// Every converged fit satisfies the first-order conditions.
pub fn foc_at_converged_fits(cases: usize) -> Check {
    let mut rng = Rng::new(303);
    let opts = SolverOptions::default();
    let mut converged = 0;
    for c in 0..cases {
        let data = if c % 2 == 0 { het_dataset(&mut rng, 50 + c, 3) } else { misspecified_dataset(&mut rng, 50 + c, 3) };
        for family in FAMILIES {
            let fit = fit_mvr(&data, family, &opts).map_err(|e| e.to_string())?;
            if !fit.converged {
                continue;
            }
            converged += 1;
            let m = evaluate(&data, &fit.theta, false).unwrap().moments;
            if m.max_abs() > opts.threshold(fit.loss) {
                return Err(format!("case {c} ({family:?}): moment residual {:.2e}", m.max_abs()));
            }
        }
    }
    Ok(format!("{converged} converged fits stationary"))
}

/// Two different feasible starts reach the same `θ̂`.
pub fn two_start_uniqueness(cases: usize) -> Check {
    let mut rng = Rng::new(404);
    let opts = SolverOptions::default();
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let data = het_dataset(&mut rng, 80 + c, 3);
        for family in FAMILIES {
            let a = minimize(&data, family, &opts).map_err(|e| e.to_string())?;
            let start = match family {
                ScaleFamily::Linear => {
                    let mut g = a.theta.gamma.clone() * 3.0;
                    g[0] += 1.0;
                    g
                }
                ScaleFamily::Exponential => DVector::from_fn(data.k(), |j, _| if j == 0 { 1.0 } else { -0.3 }),
            };
            let b = minimize_from(&data, family, &start, &opts).map_err(|e| e.to_string())?;
            if !(a.converged() && b.converged()) {
                return Err(format!("case {c} ({family:?}): statuses {:?} / {:?}", a.status, b.status));
            }
            let diff = (a.theta.stacked() - b.theta.stacked()).amax();
            worst = worst.max(diff);
            if diff > 1e-6 {
                return Err(format!("case {c} ({family:?}): starts disagree by {diff:.2e}"));
            }
        }
    }
    Ok(format!("{cases} datasets per scale, max disagreement {worst:.1e}"))
}

/// A single-restriction Wald statistic is the squared t statistic.
pub fn wald_is_t_squared() -> Check {
    let mut rng = Rng::new(505);
    let data = het_dataset(&mut rng, 200, 3);
    for family in FAMILIES {
        let fit = fit_mvr(&data, family, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let vcov = sandwich(&data, &fit, VcovRegime::General).map_err(|e| e.to_string())?;
        let (se_b, se_g) = std_errors(&vcov, data.n()).map_err(|e| e.to_string())?;
        let k = data.k();
        for j in 0..2 * k {
            let mut r = DMatrix::zeros(1, 2 * k);
            r[(0, j)] = 1.0;
            let null = 0.25;
            let w = wald_test(&fit, &vcov, data.n(), &r, &DVector::from_element(1, null)).map_err(|e| e.to_string())?;
            let (est, se) = if j < k { (fit.beta()[j], se_b[j]) } else { (fit.gamma()[j - k], se_g[j - k]) };
            let t = (est - null) / se;
            if (w.statistic - t * t).abs() > 1e-12 * (t * t).max(1.0) {
                return Err(format!("{family:?} coordinate {j}: W = {} vs t² = {}", w.statistic, t * t));
            }
        }
    }
    Ok("W = t² for every coordinate".into())
}

/// Restricting `γ` to an intercept reproduces OLS.
pub fn restricted_mvr_is_ols(cases: usize) -> Check {
    let mut rng = Rng::new(606);
    let mut worst: f64 = 0.0;
    for c in 0..cases {
        let data = misspecified_dataset(&mut rng, 40 + c, 2 + c % 3);
        let ols = fit_ols(&data).map_err(|e| e.to_string())?;
        let mut mask = vec![false; data.k()];
        mask[0] = true;
        for family in FAMILIES {
            let r = restricted_minimize(&data, family, &mask, &SolverOptions::default()).map_err(|e| e.to_string())?;
            let s = family.value(r.theta.gamma[0]).unwrap();
            let diff = (&r.theta.beta - ols.beta()).amax().max((s - ols.fitted_scale[0]).abs());
            worst = worst.max(diff);
            if !r.converged() || diff > 1e-8 {
                return Err(format!("case {c} ({family:?}): {:?}, difference {diff:.2e}", r.status));
            }
        }
    }
    Ok(format!("{cases} datasets per scale, max difference {worst:.1e}"))
}

/// In-sample dominance over OLS on `count` random datasets per scale.
pub fn dominance(count: usize) -> Check {
    let mut rng = Rng::new(707);
    let opts = SolverOptions::default();
    let (mut exp_bound_held, mut exp_total) = (0, 0);
    for c in 0..count {
        let n = 30 + (rng.uniform() * 170.0) as usize;
        let k = 2 + c % 3;
        let data = if c % 2 == 0 { het_dataset(&mut rng, n, k) } else { misspecified_dataset(&mut rng, n, k) };
        let ols = fit_ols(&data).map_err(|e| e.to_string())?;
        let sigma_ls = ols.loss;
        for family in FAMILIES {
            let mvr = fit_mvr(&data, family, &opts).map_err(|e| e.to_string())?;
            if !(mvr.converged || mvr.on_boundary) {
                return Err(format!("dataset {c} ({family:?}): solver did not finish"));
            }
            let tag = format!("dataset {c} ({family:?}, n={n}, k={k})");
            if mvr.loss > sigma_ls * (1.0 + 1e-10) {
                return Err(format!("{tag}: loss {} > OLS {}", mvr.loss, sigma_ls));
            }
            let wmse = weighted_mse(&data, &mvr);
            if wmse > sigma_ls * (1.0 + 1e-8) {
                return Err(format!("{tag}: weighted MSE {wmse} > OLS RMSE {sigma_ls}"));
            }
            let gap = gaussian_pseudo_loglik(&mvr) - gaussian_pseudo_loglik(&ols);
            let bound = loglik_bound(&mvr, &ols);
            match family {
                ScaleFamily::Linear => {
                    if gap < -1e-10 {
                        return Err(format!("{tag}: log-likelihood gap {gap:.3e}"));
                    }
                }
                ScaleFamily::Exponential => {
                    exp_total += 1;
                    if bound.holds() {
                        exp_bound_held += 1;
                        if gap < -1e-10 {
                            return Err(format!("{tag}: bound holds but gap {gap:.3e}"));
                        }
                    }
                    let identity = 0.5 * (1.0 + bound.epsilon - bound.mean_e2);
                    if (gap - identity).abs() > 1e-9 {
                        return Err(format!("{tag}: gap {gap} vs ½(1+ε−mean ê²) {identity}"));
                    }
                }
            }
        }
    }
    Ok(format!("{count} datasets per scale; exponential bound held in {exp_bound_held}/{exp_total}"))
}

/// Large-sample check on `y = 1 + x + exp(0.5 + 0.2x) ε`: the MVR estimate
/// and the two-step oracle are both close to the truth.
pub fn consistency(n: usize, seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    let reg = DMatrix::from_fn(n, 1, |_, _| rng.standard_normal());
    let sigma = DVector::from_fn(n, |i, _| (0.5 + 0.2 * reg[(i, 0)]).exp());
    let y = DVector::from_fn(n, |i, _| 1.0 + reg[(i, 0)] + sigma[i] * rng.standard_normal());
    let data = Dataset::with_intercept(y, reg, vec!["x".into()]).unwrap();
    let family = ScaleFamily::Exponential;
    let fit: FitResult = fit_mvr(&data, family, &SolverOptions::default()).map_err(|e| e.to_string())?;
    if !fit.converged {
        return Err("MVR fit did not converge".into());
    }
    let truth = DVector::from_vec(vec![1.0, 1.0, 0.5, 0.2]);
    let err = (fit.theta.stacked() - &truth).amax();
    let oracle = sequential_oracle(&data, family, &sigma, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let stacked = DVector::from_iterator(4, oracle.beta.iter().chain(oracle.gamma.iter()).copied());
    let gap = (fit.theta.stacked() - stacked).amax();
    if err > 0.05 || gap > 0.05 {
        return Err(format!("|θ̂ − θ₀|∞ = {err:.4}, |θ̂ − oracle|∞ = {gap:.4}"));
    }
    Ok(format!("|θ̂ − θ₀|∞ = {err:.4}, |θ̂ − oracle|∞ = {gap:.4}"))
}
