//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MvrError, Result};

/// Relative pivot threshold below which the Cholesky route is abandoned for QR.
pub const CHOL_PIVOT_TOL: f64 = 1e-12;

/// `X' diag(w) X`.
pub fn xtwx(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let k = x.ncols();
    let mut out = DMatrix::zeros(k, k);
    for i in 0..x.nrows() {
        let wi = w[i];
        for a in 0..k {
            let xa = x[(i, a)] * wi;
            for b in 0..=a {
                out[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    symmetrize_lower(&mut out);
    out
}

/// `X' diag(w) v`.
pub fn xtwv(x: &DMatrix<f64>, w: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let k = x.ncols();
    let mut out = DVector::zeros(k);
    for i in 0..x.nrows() {
        let c = w[i] * v[i];
        for a in 0..k {
            out[a] += x[(i, a)] * c;
        }
    }
    out
}

pub(crate) fn symmetrize_lower(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for a in 0..k {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
}

/// Solves `min Σ w_i (y_i − x_i'β)²` for non-negative weights.
///
/// Uses the Cholesky factor of `X'WX`; when a pivot of that factor falls
/// below `CHOL_PIVOT_TOL` relative to the largest diagonal entry, switches to
/// a Householder QR of `W^{1/2} X`.
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let a = xtwx(x, w);
    let rhs = xtwv(x, w, y);
    let max_diag = a.diagonal().iter().cloned().fold(0.0, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return Err(MvrError::RankDeficient);
    }
    if let Some(chol) = a.clone().cholesky() {
        let l = chol.l_dirty();
        let min_pivot = (0..l.nrows()).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
        if min_pivot > CHOL_PIVOT_TOL * max_diag {
            return Ok(chol.solve(&rhs));
        }
    }
    qr_weighted_least_squares(x, y, w)
}

fn qr_weighted_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (n, k) = x.shape();
    let sw = w.map(f64::sqrt);
    let xs = DMatrix::from_fn(n, k, |i, j| x[(i, j)] * sw[i]);
    let ys = y.component_mul(&sw);
    let qr = xs.qr();
    let r = qr.r();
    let max = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..k).any(|j| r[(j, j)].abs() <= 1e-14 * max) {
        return Err(MvrError::RankDeficient);
    }
    let qty = qr.q().transpose() * ys;
    r.solve_upper_triangular(&qty).ok_or(MvrError::RankDeficient)
}

/// Inverse of a symmetric matrix through its eigendecomposition; fails when
/// the smallest absolute eigenvalue is below `rel_cut` times the largest.
pub fn symmetric_inverse(m: &DMatrix<f64>, rel_cut: f64) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return None;
    }
    if eig.eigenvalues.iter().any(|v| v.abs() <= rel_cut * max) {
        return None;
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let q = &eig.eigenvectors;
    Some(q * DMatrix::from_diagonal(&inv_vals) * q.transpose())
}

/// Extreme eigenvalues `(min, max)` of the symmetric part of `m`.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let vals = SymmetricEigen::new(sym).eigenvalues;
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Solves the symmetric system `(A + τI) d = b`, doubling `τ` from `1e-8`
/// (scaled by the largest diagonal entry) until the Cholesky factorisation
/// succeeds. Returns the solution and the final shift.
pub fn levenberg_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let scale = a.diagonal().iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let k = a.nrows();
    let mut tau = 0.0;
    for _ in 0..200 {
        let shifted = a + DMatrix::identity(k, k) * (tau * scale);
        if let Some(chol) = shifted.cholesky() {
            let l = chol.l_dirty();
            let ok = (0..k).all(|j| l[(j, j)] * l[(j, j)] > CHOL_PIVOT_TOL * scale);
            if ok {
                let d = chol.solve(b);
                if d.iter().all(|v| v.is_finite()) {
                    return Some((d, tau));
                }
            }
        }
        tau = if tau == 0.0 { 1e-8 } else { tau * 2.0 };
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wls_matches_normal_equations() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 2.5, 5.0]);
        let w = DVector::from_vec(vec![1.0, 0.5, 2.0, 1.0]);
        let b = weighted_least_squares(&x, &y, &w).unwrap();
        let q = qr_weighted_least_squares(&x, &y, &w).unwrap();
        assert!((b - q).amax() < 1e-12);
    }

    #[test]
    fn near_collinear_falls_back_to_qr() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-7, 1.0, 1.0 + 2e-7]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let w = DVector::from_element(3, 1.0);
        let b = weighted_least_squares(&x, &y, &w).unwrap();
        // Exact fit exists: y = 1 + 1e7 (x - 1)
        let fitted = &x * &b;
        assert!((fitted - y).amax() < 1e-4);
    }

    #[test]
    fn symmetric_inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(symmetric_inverse(&m, 1e-12).is_none());
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let inv = symmetric_inverse(&m, 1e-12).unwrap();
        assert!((&m * inv - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn levenberg_shift_handles_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let (_, tau) = levenberg_solve(&a, &b).unwrap();
        assert!(tau > 1e-3);
        let spd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (d, tau) = levenberg_solve(&spd, &b).unwrap();
        assert_eq!(tau, 0.0);
        assert!((spd * d - b).amax() < 1e-14);
    }
}
