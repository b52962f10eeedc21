//! Damped Newton minimisation of the concentrated loss `γ ↦ Q_n(β̂(γ), γ)`.
//!
//! The Newton system is the `γγ` Schur complement of the full Hessian at
//! `(β̂(γ), γ)`, which equals the Hessian of the concentrated loss. Steps are
//! safeguarded by a Levenberg shift when the system is not numerically
//! positive definite, a fraction-to-boundary rule for the linear scale, and
//! Armijo backtracking. Convergence is declared on the gradient of the full
//! problem so that the reported norm certifies both moment conditions.
//!
//! Under the linear scale the sample loss may have no interior minimiser: it
//! can keep decreasing as some `x_i'γ → 0` while `β̂(γ)` interpolates row `i`.
//! Rows whose index falls below `ACTIVATION_RATIO · max_j x_j'γ` are then held
//! fixed (projected Newton on the face), and the solver stops with status
//! `Boundary` once the projected gradient vanishes with non-negative
//! multipliers. Rows with a negative multiplier are released.

use nalgebra::{DMatrix, DVector};

use crate::error::{MvrError, Result};
use crate::linalg::{levenberg_solve, symmetric_inverse, weighted_least_squares};
use crate::objective::{concentrated_beta, concentrated_loss, evaluate};
use crate::scale::ScaleFamily;
use crate::types::{gamma_is_feasible, Dataset, ThetaEstimate};

/// Fraction of the distance to the linear-scale boundary a step may cover.
const FRACTION_TO_BOUNDARY: f64 = 0.99;
/// Smallest step multiplier tried before the line search gives up.
const MIN_STEP: f64 = 1e-14;
/// Relative index size at which a linear-scale positivity constraint is
/// treated as active.
const ACTIVATION_RATIO: f64 = 1e-8;
const FACE_DECREMENT_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub feasibility_margin: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 200,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            feasibility_margin: 1e-10,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(MvrError::Config(format!("grad_tol must be > 0, got {}", self.grad_tol)));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(MvrError::Config(format!(
                "backtrack_factor must lie in (0, 1), got {}",
                self.backtrack_factor
            )));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(MvrError::Config(format!("armijo_c must lie in (0, 1), got {}", self.armijo_c)));
        }
        if !(self.feasibility_margin >= 0.0) {
            return Err(MvrError::Config("feasibility_margin must be >= 0".into()));
        }
        Ok(())
    }

    /// Convergence threshold for a given loss value.
    pub fn threshold(&self, loss: f64) -> f64 {
        self.grad_tol * loss.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIter,
    LineSearchFailed,
    InfeasibleStart,
    /// Stationary on the face where some linear-scale indices are pinned near
    /// zero; the loss infimum lies on the boundary of the feasible set.
    Boundary,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub theta: ThetaEstimate,
    pub loss: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub status: SolverStatus,
    /// Loss at every accepted iterate, starting point first.
    pub loss_path: Vec<f64>,
    /// Rows whose positivity constraint is active (status `Boundary`).
    pub active_rows: Vec<usize>,
    /// Max-norm of the gradient projected onto the active face; equals
    /// `grad_inf_norm` when no constraint is active.
    pub kkt_residual: f64,
}

impl SolverReport {
    pub fn converged(&self) -> bool {
        self.status == SolverStatus::Converged
    }
}

/// OLS coefficients and a constant scale equal to the OLS residual RMS.
pub fn initialize(data: &Dataset, family: ScaleFamily) -> Result<ThetaEstimate> {
    let ones = DVector::from_element(data.n(), 1.0);
    let beta = weighted_least_squares(data.x(), data.y(), &ones)?;
    let resid = data.y() - data.x() * &beta;
    let rms = (resid.norm_squared() / data.n() as f64).sqrt();
    if rms <= 1e-12 * data.y().amax().max(f64::MIN_POSITIVE) {
        return Err(MvrError::PerfectFit);
    }
    let mut gamma = DVector::zeros(data.k());
    gamma[0] = family.inverse(rms)?;
    Ok(ThetaEstimate::new(beta, gamma, family))
}

pub fn minimize(data: &Dataset, family: ScaleFamily, opts: &SolverOptions) -> Result<SolverReport> {
    let start = initialize(data, family)?;
    minimize_from(data, family, &start.gamma, opts)
}

/// Minimises from a caller-supplied starting `γ`.
pub fn minimize_from(
    data: &Dataset,
    family: ScaleFamily,
    start_gamma: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<SolverReport> {
    let mask = vec![true; data.k()];
    newton(data, family, start_gamma, &mask, opts)
}

/// Minimises over the `γ` components flagged in `free_gamma_mask`, keeping the
/// others at zero. The intercept component must be free.
pub fn restricted_minimize(
    data: &Dataset,
    family: ScaleFamily,
    free_gamma_mask: &[bool],
    opts: &SolverOptions,
) -> Result<SolverReport> {
    if free_gamma_mask.len() != data.k() {
        return Err(MvrError::DimensionMismatch(format!(
            "mask has length {}, data has k = {}",
            free_gamma_mask.len(),
            data.k()
        )));
    }
    if !free_gamma_mask[0] {
        return Err(MvrError::BadArgument("the gamma intercept must be free".into()));
    }
    let start = initialize(data, family)?;
    newton(data, family, &start.gamma, free_gamma_mask, opts)
}

fn newton(
    data: &Dataset,
    family: ScaleFamily,
    start_gamma: &DVector<f64>,
    mask: &[bool],
    opts: &SolverOptions,
) -> Result<SolverReport> {
    opts.validate()?;
    let k = data.k();
    if start_gamma.len() != k {
        return Err(MvrError::DimensionMismatch(format!(
            "start gamma has length {}, data has k = {}",
            start_gamma.len(),
            k
        )));
    }
    let free: Vec<usize> = (0..k).filter(|&j| mask[j]).collect();
    let mut gamma = start_gamma.clone();
    for j in 0..k {
        if !mask[j] {
            gamma[j] = 0.0;
        }
    }

    let margin = opts.feasibility_margin;
    if !gamma_is_feasible(family, &gamma, data, margin) {
        let beta = DVector::zeros(k);
        return Ok(SolverReport {
            theta: ThetaEstimate::new(beta, gamma, family),
            loss: f64::INFINITY,
            grad_inf_norm: f64::INFINITY,
            iterations: 0,
            status: SolverStatus::InfeasibleStart,
            loss_path: Vec::new(),
            active_rows: Vec::new(),
            kkt_residual: f64::INFINITY,
        });
    }

    let mut loss_path = Vec::new();
    let mut iterations = 0;
    let mut active: Vec<usize> = Vec::new();
    let p = free.len();
    loop {
        let beta = concentrated_beta(data, family, &gamma)?;
        let theta = ThetaEstimate::new(beta, gamma.clone(), family);
        let ev = evaluate(data, &theta, true)?;
        if loss_path.last() != Some(&ev.loss) {
            loss_path.push(ev.loss);
        }
        let m = &ev.moments;
        let gnorm = free.iter().map(|&j| m.m2[j].abs()).fold(m.m1.amax(), f64::max);
        // Gradient of the concentrated loss in the free γ coordinates.
        let grad = DVector::from_iterator(p, free.iter().map(|&j| -m.m2[j]));

        let face = if active.is_empty() { None } else { Some(active_face(data, &free, &active, &grad)) };
        let (reduced, lambda) = match &face {
            Some(Some((proj, lambda))) => (proj * &grad, lambda.clone()),
            Some(None) => {
                // Dependent active rows: drop the newest and retry.
                active.pop();
                continue;
            }
            None => (grad.clone(), DVector::zeros(0)),
        };
        // β is concentrated out, so m1 vanishes up to rounding; with rows at
        // the boundary the weights 1/s blow up and that rounding dominates.
        let kkt = reduced.amax();

        let report = |status, active: &Vec<usize>| SolverReport {
            theta: theta.clone(),
            loss: ev.loss,
            grad_inf_norm: gnorm,
            iterations,
            status,
            loss_path: loss_path.clone(),
            active_rows: active.clone(),
            kkt_residual: kkt,
        };
        let threshold = opts.threshold(ev.loss);
        if gnorm <= threshold {
            return Ok(report(SolverStatus::Converged, &Vec::new()));
        }

        let h = &ev.hessian.as_ref().expect("requested").total;
        let schur = match gamma_schur(h, k, &free) {
            Some(s) => s,
            None => return Ok(report(SolverStatus::LineSearchFailed, &active)),
        };
        let solved = match &face {
            Some(Some((proj, _))) => {
                let eye = DMatrix::<f64>::identity(p, p);
                let system = proj * &schur * proj + (&eye - proj);
                levenberg_solve(&system, &(-&reduced)).map(|(d, _)| proj * d)
            }
            _ => levenberg_solve(&schur, &(-&grad)).map(|(d, _)| d),
        };
        let direction = match solved {
            Some(d) => d,
            None => return Ok(report(SolverStatus::LineSearchFailed, &active)),
        };
        let slope = grad.dot(&direction);
        // On a face the projected gradient has a rounding floor set by the
        // boundary weights, so an unresolvable decrease also counts as
        // stationary.
        if !active.is_empty() && (kkt <= threshold || -slope <= FACE_DECREMENT_TOL * ev.loss.max(1.0)) {
            let (arg, min) = lambda
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (a, &v)| if v < acc.1 { (a, v) } else { acc });
            if min < 0.0 {
                active.remove(arg);
                continue;
            }
            return Ok(report(SolverStatus::Boundary, &active));
        }
        if iterations >= opts.max_iter {
            return Ok(report(SolverStatus::MaxIter, &active));
        }
        if !(slope < 0.0) {
            return Ok(report(SolverStatus::LineSearchFailed, &active));
        }

        let mut full_dir = DVector::zeros(k);
        for (a, &j) in free.iter().enumerate() {
            full_dir[j] = direction[a];
        }
        let mut step: f64 = 1.0;
        if family.is_constrained() {
            step = step.min(FRACTION_TO_BOUNDARY * max_feasible_step(data, &gamma, &full_dir, margin, &active));
        }

        match line_search(data, family, &gamma, &full_dir, step, ev.loss, slope, opts) {
            Some(next) => gamma = next,
            None => return Ok(report(SolverStatus::LineSearchFailed, &active)),
        }
        iterations += 1;

        if family.is_constrained() {
            let t = data.index(&gamma);
            let cut = ACTIVATION_RATIO * t.max();
            for i in 0..data.n() {
                if t[i] <= cut && !active.contains(&i) {
                    active.push(i);
                }
            }
        }
    }
}

/// Projector onto the null space of the active rows (free coordinates) and
/// the least-squares multipliers of `grad = A'λ`. `None` if the active rows
/// are linearly dependent.
fn active_face(
    data: &Dataset,
    free: &[usize],
    active: &[usize],
    grad: &DVector<f64>,
) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let p = free.len();
    if active.len() > p {
        return None;
    }
    let a = DMatrix::from_fn(active.len(), p, |r, c| data.x()[(active[r], free[c])]);
    let aat_inv = symmetric_inverse(&(&a * a.transpose()), 1e-12)?;
    let lambda = &aat_inv * (&a * grad);
    let proj = DMatrix::identity(p, p) - a.transpose() * &aat_inv * &a;
    Some((proj, lambda))
}

/// `H_γγ − H_γβ H_ββ⁻¹ H_βγ` restricted to the free γ coordinates.
fn gamma_schur(h: &DMatrix<f64>, k: usize, free: &[usize]) -> Option<DMatrix<f64>> {
    let hbb = h.view((0, 0), (k, k)).into_owned();
    let p = free.len();
    let hbg = DMatrix::from_fn(k, p, |i, a| h[(i, k + free[a])]);
    let hgg = DMatrix::from_fn(p, p, |a, b| h[(k + free[a], k + free[b])]);
    let chol = hbb.cholesky()?;
    let solved = chol.solve(&hbg);
    let mut s = hgg - hbg.transpose() * solved;
    let st = s.transpose();
    s = (s + st) * 0.5;
    Some(s)
}

/// Largest `α` with `x_i'(γ + α d) ≥ margin` for all rows not in `skip`.
fn max_feasible_step(data: &Dataset, gamma: &DVector<f64>, dir: &DVector<f64>, margin: f64, skip: &[usize]) -> f64 {
    let t = data.index(gamma);
    let dt = data.index(dir);
    let mut best = f64::INFINITY;
    for i in 0..data.n() {
        if dt[i] < 0.0 && !skip.contains(&i) {
            best = best.min((t[i] - margin) / -dt[i]);
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn line_search(
    data: &Dataset,
    family: ScaleFamily,
    gamma: &DVector<f64>,
    dir: &DVector<f64>,
    initial_step: f64,
    f0: f64,
    slope: f64,
    opts: &SolverOptions,
) -> Option<DVector<f64>> {
    let scale = f0.abs().max(1.0);
    let eval = |step: f64| -> Option<(DVector<f64>, f64)> {
        let trial = gamma + dir * step;
        if !gamma_is_feasible(family, &trial, data, opts.feasibility_margin) {
            return None;
        }
        concentrated_loss(data, family, &trial).ok().filter(|f| f.is_finite()).map(|f| (trial, f))
    };

    // Inside the region where the Newton decrement is at rounding level the
    // Armijo test cannot resolve the decrease; accept the Newton step unless
    // it visibly increases the loss.
    if -slope <= 1e-10 * scale {
        if let Some((trial, f)) = eval(initial_step) {
            if f <= f0 + 1e-12 * scale {
                return Some(trial);
            }
        }
    }

    let mut step = initial_step;
    while step >= MIN_STEP {
        if let Some((trial, f)) = eval(step) {
            if f <= f0 + opts.armijo_c * step * slope {
                return Some(trial);
            }
        }
        step *= opts.backtrack_factor;
    }
    None
}
