//! Least squares under linear inequality constraints,
//!
//! ```text
//! min ½‖Z c − r‖²   subject to   Z c ≥ lower (row-wise),
//! ```
//!
//! by a primal active-set method. Designed for the tall, narrow first-stage
//! regressions of the WLS estimators: `k` is tiny, the number of constraints
//! equals the number of observations.

use nalgebra::{DMatrix, DVector};

use crate::error::{MvrError, Result};
use crate::linalg::xtwx;

#[derive(Debug, Clone)]
pub struct LseiSolution {
    pub coef: DVector<f64>,
    /// Rows whose constraint holds with equality at the solution.
    pub active: Vec<usize>,
    pub iterations: usize,
}

pub fn lsei_lower_bound(z: &DMatrix<f64>, r: &DVector<f64>, lower: f64) -> Result<LseiSolution> {
    let (n, k) = z.shape();
    if r.len() != n {
        return Err(MvrError::DimensionMismatch(format!("r has {} rows, Z has {}", r.len(), n)));
    }
    if n == 0 || k == 0 || (0..n).any(|i| z[(i, 0)] != 1.0) {
        return Err(MvrError::BadArgument("first column of Z must be an intercept".into()));
    }
    let h = xtwx(z, &DVector::from_element(n, 1.0));
    let ztr = z.transpose() * r;
    let scale = h.diagonal().amax().max(1.0);

    // Constant fit strictly above the bound is always feasible.
    let mut c = DVector::zeros(k);
    c[0] = (r.mean().max(lower)) + 1.0;

    let mut active: Vec<usize> = Vec::new();
    let max_iter = 50 * (n + k);
    for iter in 0..max_iter {
        let g = &h * &c - &ztr;
        let m = active.len();
        let mut kkt = DMatrix::zeros(k + m, k + m);
        kkt.view_mut((0, 0), (k, k)).copy_from(&h);
        for (a, &i) in active.iter().enumerate() {
            for j in 0..k {
                kkt[(j, k + a)] = -z[(i, j)];
                kkt[(k + a, j)] = z[(i, j)];
            }
        }
        let mut rhs = DVector::zeros(k + m);
        rhs.rows_mut(0, k).copy_from(&(-&g));
        let sol = kkt.lu().solve(&rhs).ok_or(MvrError::QpInfeasible)?;
        let p = sol.rows(0, k).into_owned();
        let lambda = sol.rows(k, m).into_owned();

        // With k independent active rows the only feasible direction is 0.
        let p_small = m >= k || p.amax() <= 1e-10 * (1.0 + c.amax());
        if p_small {
            let (arg, min) = lambda
                .iter()
                .enumerate()
                .fold((usize::MAX, 0.0), |acc, (a, &v)| if v < acc.1 { (a, v) } else { acc });
            if arg == usize::MAX || min >= -1e-10 * scale {
                return Ok(LseiSolution { coef: c, active, iterations: iter });
            }
            active.remove(arg);
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        let pnorm = p.norm();
        for i in 0..n {
            if active.contains(&i) {
                continue;
            }
            let row = z.row(i);
            let ap = row.dot(&p.transpose());
            if ap < -1e-13 * row.norm() * pnorm {
                let slack = row.dot(&c.transpose()) - lower;
                let step = (slack / -ap).max(0.0);
                if step < alpha {
                    alpha = step;
                    blocking = Some(i);
                }
            }
        }
        c += &p * alpha;
        if let Some(i) = blocking {
            active.push(i);
        }
    }
    Err(MvrError::QpInfeasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::weighted_least_squares;
    use crate::rng::Rng;

    /// Enumerates every candidate active set of size ≤ k, solves the
    /// equality-constrained problem, and keeps the best feasible candidate.
    fn brute_force(z: &DMatrix<f64>, r: &DVector<f64>, lower: f64) -> DVector<f64> {
        let (n, k) = z.shape();
        let mut best: Option<(f64, DVector<f64>)> = None;
        let mut consider = |c: DVector<f64>| {
            if (z * &c).iter().all(|&v| v >= lower - 1e-9) {
                let obj = (z * &c - r).norm_squared();
                if best.as_ref().map_or(true, |b| obj < b.0) {
                    best = Some((obj, c));
                }
            }
        };
        for mask in 0u32..(1 << n) {
            let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            if set.len() > k {
                continue;
            }
            let m = set.len();
            let h = z.transpose() * z;
            let mut kkt = DMatrix::zeros(k + m, k + m);
            kkt.view_mut((0, 0), (k, k)).copy_from(&h);
            let mut rhs = DVector::zeros(k + m);
            rhs.rows_mut(0, k).copy_from(&(z.transpose() * r));
            for (a, &i) in set.iter().enumerate() {
                for j in 0..k {
                    kkt[(j, k + a)] = z[(i, j)];
                    kkt[(k + a, j)] = z[(i, j)];
                }
                rhs[k + a] = lower;
            }
            if let Some(sol) = kkt.lu().solve(&rhs) {
                if sol.iter().all(|v| v.is_finite()) {
                    consider(sol.rows(0, k).into_owned());
                }
            }
        }
        best.unwrap().1
    }

    #[test]
    fn matches_enumeration_oracle() {
        let mut rng = Rng::new(17);
        for case in 0..40 {
            let n = 7;
            let k = 2 + case % 2;
            let z = DMatrix::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { (rng.standard_normal()).exp() });
            let r = DVector::from_fn(n, |_, _| 2.0 * rng.standard_normal() - 1.0);
            let got = lsei_lower_bound(&z, &r, 0.1).unwrap();
            let want = brute_force(&z, &r, 0.1);
            let obj_got = (&z * &got.coef - &r).norm_squared();
            let obj_want = (&z * &want - &r).norm_squared();
            assert!((obj_got - obj_want).abs() <= 1e-9 * (1.0 + obj_want), "case {case}");
            assert!((&z * &got.coef).iter().all(|&v| v >= 0.1 - 1e-10));
        }
    }

    #[test]
    fn inactive_constraints_give_plain_ls() {
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let r = DVector::from_vec(vec![5.0, 6.1, 6.9, 8.0]);
        let got = lsei_lower_bound(&z, &r, 0.1).unwrap();
        let ls = weighted_least_squares(&z, &r, &DVector::from_element(4, 1.0)).unwrap();
        assert!((got.coef - ls).amax() < 1e-10);
        assert!(got.active.is_empty());
    }

    #[test]
    fn constant_response_below_bound_sits_on_it() {
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let r = DVector::from_element(4, (0.01f64).ln());
        let got = lsei_lower_bound(&z, &r, 0.1).unwrap();
        let fitted = &z * &got.coef;
        assert!(fitted.iter().all(|&v| (v - 0.1).abs() < 1e-10));
    }
}
