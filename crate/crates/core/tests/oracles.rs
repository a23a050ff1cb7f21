mod common;

use common::checks;
use common::*;
use elmi::el::solve_lagrange;
use elmi::kernel::{conditional_law, KernelSpec};
use elmi::linalg::RowMatrix;

#[test]
fn lagrange_matches_scalar_bisection() {
    let e = checks::lagrange_scalar();
    assert!(e <= 1e-10, "worst relative error {e}");
}

#[test]
fn lagrange_weights_are_probabilities() {
    let mut r = rng(12);
    let rows: Vec<Vec<f64>> = (0..80).map(|_| vec![normal(&mut r) + 0.2, normal(&mut r) - 0.1]).collect();
    let sol = solve_lagrange(&RowMatrix::from_rows(&rows)).unwrap();
    let w = sol.weights();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    assert!(w.iter().all(|&v| v > 0.0));
    for j in 0..2 {
        let m: f64 = rows.iter().zip(&w).map(|(g, p)| p * g[j]).sum();
        assert!(m.abs() < 1e-10);
    }
}

#[test]
fn full_data_mean_matches_sample_mean() {
    assert!(checks::mele_mean() <= 1e-6);
}

#[test]
fn full_data_correlation_matches_moments() {
    assert!(checks::mele_correlation() <= 1e-6);
}

#[test]
fn full_data_linreg_matches_ols() {
    assert!(checks::mele_linreg() <= 1e-6);
}

#[test]
fn full_data_logistic_matches_irls() {
    assert!(checks::mele_logistic() <= 1e-6);
}

#[test]
fn conditional_law_matches_direct_summation() {
    let e = checks::conditional_law_direct();
    assert!(e <= 1e-12, "worst error {e}");
}

#[test]
fn fourth_order_kernel_truncates_negative_weights() {
    let d = checks::three_donor_fixture();
    let k = KernelSpec::new(4, 0.3).unwrap();
    let law = conditional_law(&d, &k, &[0.0]).unwrap();
    assert!(law.raw_weights()[2] < 0.0);
    assert_eq!(law.weights()[2], 0.0);
    assert!((law.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

#[test]
fn builtin_jacobians_match_finite_differences() {
    for (name, e) in checks::builtin_jacobians() {
        assert!(e <= 1e-6, "{name}: relative error {e}");
    }
}

#[test]
fn imputed_jacobian_matches_finite_differences() {
    for (name, e) in checks::imputed_jacobians() {
        assert!(e <= 1e-6, "{name}: relative error {e}");
    }
}
