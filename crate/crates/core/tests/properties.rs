mod common;

use common::*;
use mvr_core::objective::{concentrated_loss, evaluate};
use mvr_core::solver::{minimize, restricted_minimize};
use mvr_core::{fit_mvr, Dataset, Rng, ScaleFamily, SolverOptions};
use nalgebra::DVector;

fn ok(check: Check) {
    match check {
        Ok(msg) => println!("{msg}"),
        Err(msg) => panic!("{msg}"),
    }
}

#[test]
fn gradient_vs_finite_differences() {
    ok(gradient_matches_finite_differences(200));
}

#[test]
fn hessian_symmetric_consistent_and_positive_definite() {
    ok(hessian_checks(40));
}

#[test]
fn converged_fits_are_stationary() {
    ok(foc_at_converged_fits(30));
}

#[test]
fn two_starts_agree() {
    ok(two_start_uniqueness(15));
}

#[test]
fn single_restriction_wald_equals_t_squared() {
    ok(wald_is_t_squared());
}

#[test]
fn intercept_only_scale_reproduces_ols() {
    ok(restricted_mvr_is_ols(20));
}

#[test]
fn h1_block_is_positive_definite() {
    let mut rng = Rng::new(9);
    for c in 0..20 {
        let family = FAMILIES[c % 2];
        let data = het_dataset(&mut rng, 25, 3);
        let theta = random_theta(&mut rng, &data, family);
        let h1 = evaluate(&data, &theta, true).unwrap().hessian.unwrap().h1;
        assert!(h1.symmetric_eigen().eigenvalues.min() > 0.0, "case {c}");
    }
}

#[test]
fn affine_equivariance() {
    let mut rng = Rng::new(10);
    let data = het_dataset(&mut rng, 150, 3);
    let (a, shift) = (2.5, DVector::from_vec(vec![0.3, -1.0, 2.0]));
    let y = data.y() * a + data.x() * &shift;
    let moved = data.with_y(y).unwrap();
    for family in FAMILIES {
        let base = fit_mvr(&data, family, &SolverOptions::default()).unwrap();
        let fit = fit_mvr(&moved, family, &SolverOptions::default()).unwrap();
        assert!(base.converged && fit.converged);
        let want = base.beta() * a + &shift;
        assert!((fit.beta() - &want).amax() < 1e-6 * want.amax());
        assert!((&fit.fitted_scale - &base.fitted_scale * a).amax() < 1e-6 * fit.fitted_scale.amax());
        match family {
            ScaleFamily::Linear => assert!((fit.gamma() - base.gamma() * a).amax() < 1e-6),
            ScaleFamily::Exponential => {
                assert!((fit.gamma()[0] - base.gamma()[0] - a.ln()).abs() < 1e-6);
                assert!((fit.gamma().rows(1, 2) - base.gamma().rows(1, 2)).amax() < 1e-6);
            }
        }
    }
}

#[test]
fn nested_scale_models_order_the_loss() {
    let mut rng = Rng::new(11);
    for c in 0..10 {
        let data = misspecified_dataset(&mut rng, 120, 4);
        for family in FAMILIES {
            let opts = SolverOptions::default();
            let full = minimize(&data, family, &opts).unwrap();
            let part = restricted_minimize(&data, family, &[true, true, false, false], &opts).unwrap();
            let one = restricted_minimize(&data, family, &[true, false, false, false], &opts).unwrap();
            assert!(full.loss <= part.loss + 1e-12, "case {c}");
            assert!(part.loss <= one.loss + 1e-12, "case {c}");
        }
    }
}

#[test]
fn concentrated_loss_matches_brute_force_beta_search() {
    // Five points, one regressor: for fixed γ, scan β on a grid and refine.
    let y = DVector::from_vec(vec![0.3, 1.1, 1.7, 3.2, 3.9]);
    let reg = nalgebra::DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
    let data = Dataset::with_intercept(y, reg, vec!["x".into()]).unwrap();
    let mut rng = Rng::new(12);
    for _ in 0..10 {
        let gamma = DVector::from_vec(vec![0.2 + rng.uniform(), 0.3 * rng.uniform()]);
        let family = ScaleFamily::Linear;
        let s = data.index(&gamma);
        let q = |b0: f64, b1: f64| {
            (0..5)
                .map(|i| {
                    let u = data.y()[i] - b0 - b1 * i as f64;
                    0.5 * (u * u / s[i] + s[i])
                })
                .sum::<f64>()
                / 5.0
        };
        let (mut c0, mut c1, mut width) = (0.0, 1.0, 4.0);
        for _ in 0..40 {
            let mut best = (f64::INFINITY, c0, c1);
            for a in -10..=10 {
                for b in -10..=10 {
                    let (b0, b1) = (c0 + width * a as f64 / 10.0, c1 + width * b as f64 / 10.0);
                    let v = q(b0, b1);
                    if v < best.0 {
                        best = (v, b0, b1);
                    }
                }
            }
            (c0, c1) = (best.1, best.2);
            width *= 0.5;
        }
        let want = q(c0, c1);
        let got = concentrated_loss(&data, family, &gamma).unwrap();
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
}
