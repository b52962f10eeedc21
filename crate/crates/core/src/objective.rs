//! Sample mean-variance regression loss
//!
//! ```text
//! Q_n(θ) = n⁻¹ Σ ½ {((y_i − x_i'β) / s(x_i'γ))² + 1} s(x_i'γ)
//! ```
//!
//! together with its moment functions (the negative gradient), its Hessian,
//! and the map `γ ↦ β̂(γ)` that concentrates `β` out of the problem.

use nalgebra::{DMatrix, DVector};

use crate::error::{MvrError, Result};
use crate::linalg::{symmetrize_lower, weighted_least_squares};
use crate::scale::{ScaleEval, ScaleFamily};
use crate::types::{Dataset, ThetaEstimate};

/// Sample means of `m₁ = x e` and `m₂ = ½ x s₁(x'γ)(e² − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    pub m1: DVector<f64>,
    pub m2: DVector<f64>,
}

impl MomentVector {
    /// Gradient of the loss: `−(m₁, m₂)`.
    pub fn gradient(&self) -> DVector<f64> {
        let k = self.m1.len();
        DVector::from_fn(2 * k, |i, _| if i < k { -self.m1[i] } else { -self.m2[i - k] })
    }

    pub fn max_abs(&self) -> f64 {
        self.m1.amax().max(self.m2.amax())
    }
}

/// `H = H₁ + H₂`, where `H₁` collects the rank-one per-observation terms and
/// `H₂` the `s₂` correction in the `γγ` block.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianSplit {
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
    pub total: DMatrix<f64>,
}

/// One pass over the data.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub moments: MomentVector,
    pub hessian: Option<HessianSplit>,
}

/// Evaluates the scale at row `i`, mapping a domain violation to `Infeasible`.
#[inline]
pub(crate) fn scale_at(family: ScaleFamily, t: f64) -> Result<ScaleEval> {
    family.eval(t).map_err(|e| match e {
        MvrError::DomainViolation { t } => MvrError::Infeasible { min_scale: t },
        other => other,
    })
}

/// Fused evaluation of loss, moments and (optionally) the Hessian.
pub fn evaluate(data: &Dataset, theta: &ThetaEstimate, with_hessian: bool) -> Result<Evaluation> {
    theta.check_dims(data)?;
    let (n, k) = (data.n(), data.k());
    let x = data.x();
    let y = data.y();
    let mut loss = 0.0;
    let mut m1 = DVector::zeros(k);
    let mut m2 = DVector::zeros(k);
    let (mut h11, mut h12, mut h22a, mut h22b) = if with_hessian {
        (
            DMatrix::zeros(k, k),
            DMatrix::zeros(k, k),
            DMatrix::zeros(k, k),
            DMatrix::zeros(k, k),
        )
    } else {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    };

    for i in 0..n {
        let row = x.row(i);
        let t = row.dot(&theta.gamma.transpose());
        let mean = row.dot(&theta.beta.transpose());
        let sc = scale_at(theta.scale, t)?;
        let e = (y[i] - mean) / sc.s;
        let e2 = e * e;
        loss += 0.5 * (e2 + 1.0) * sc.s;
        let c2 = 0.5 * sc.s1 * (e2 - 1.0);
        for a in 0..k {
            m1[a] += row[a] * e;
            m2[a] += row[a] * c2;
        }
        if with_hessian {
            let w11 = 1.0 / sc.s;
            let w12 = sc.s1 * e / sc.s;
            let w22a = (sc.s1 * e).powi(2) / sc.s;
            let w22b = -0.5 * sc.s2 * (e2 - 1.0);
            for a in 0..k {
                let xa = row[a];
                for b in 0..=a {
                    let xx = xa * row[b];
                    h11[(a, b)] += w11 * xx;
                    h12[(a, b)] += w12 * xx;
                    h22a[(a, b)] += w22a * xx;
                    h22b[(a, b)] += w22b * xx;
                }
            }
        }
    }

    let inv_n = 1.0 / n as f64;
    let hessian = if with_hessian {
        for m in [&mut h11, &mut h12, &mut h22a, &mut h22b] {
            symmetrize_lower(m);
            *m *= inv_n;
        }
        let mut h1 = DMatrix::zeros(2 * k, 2 * k);
        h1.view_mut((0, 0), (k, k)).copy_from(&h11);
        h1.view_mut((0, k), (k, k)).copy_from(&h12);
        h1.view_mut((k, 0), (k, k)).copy_from(&h12);
        h1.view_mut((k, k), (k, k)).copy_from(&h22a);
        let mut h2 = DMatrix::zeros(2 * k, 2 * k);
        h2.view_mut((k, k), (k, k)).copy_from(&h22b);
        let total = &h1 + &h2;
        Some(HessianSplit { h1, h2, total })
    } else {
        None
    };

    let out = Evaluation {
        loss: loss * inv_n,
        moments: MomentVector { m1: m1 * inv_n, m2: m2 * inv_n },
        hessian,
    };
    if !out.loss.is_finite() {
        return Err(MvrError::NonFinite { what: "loss" });
    }
    Ok(out)
}

pub fn loss(data: &Dataset, theta: &ThetaEstimate) -> Result<f64> {
    theta.check_dims(data)?;
    let mut total = 0.0;
    for i in 0..data.n() {
        let row = data.x().row(i);
        let s = scale_at(theta.scale, row.dot(&theta.gamma.transpose()))?.s;
        let e = (data.y()[i] - row.dot(&theta.beta.transpose())) / s;
        total += 0.5 * (e * e + 1.0) * s;
    }
    Ok(total / data.n() as f64)
}

pub fn moments(data: &Dataset, theta: &ThetaEstimate) -> Result<MomentVector> {
    Ok(evaluate(data, theta, false)?.moments)
}

pub fn hessian(data: &Dataset, theta: &ThetaEstimate) -> Result<HessianSplit> {
    Ok(evaluate(data, theta, true)?.hessian.expect("requested"))
}

/// Fitted scales `s(x_i'γ)`; errors if any is non-positive.
pub fn fitted_scales(data: &Dataset, family: ScaleFamily, gamma: &DVector<f64>) -> Result<DVector<f64>> {
    if gamma.len() != data.k() {
        return Err(MvrError::DimensionMismatch(format!(
            "gamma has length {}, data has k = {}",
            gamma.len(),
            data.k()
        )));
    }
    let t = data.index(gamma);
    let mut out = DVector::zeros(data.n());
    for i in 0..data.n() {
        out[i] = scale_at(family, t[i])?.s;
    }
    Ok(out)
}

/// `β̂(γ) = [X'Ω⁻¹X]⁻¹ X'Ω⁻¹ y` with `Ω = diag(s(x_i'γ))`.
pub fn concentrated_beta(data: &Dataset, family: ScaleFamily, gamma: &DVector<f64>) -> Result<DVector<f64>> {
    let s = fitted_scales(data, family, gamma)?;
    let w = s.map(|v| 1.0 / v);
    weighted_least_squares(data.x(), data.y(), &w)
}

/// Loss at `(β̂(γ), γ)`.
pub fn concentrated_loss(data: &Dataset, family: ScaleFamily, gamma: &DVector<f64>) -> Result<f64> {
    let beta = concentrated_beta(data, family, gamma)?;
    loss(data, &ThetaEstimate::new(beta, gamma.clone(), family))
}
