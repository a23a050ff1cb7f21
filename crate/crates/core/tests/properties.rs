mod common;

use std::sync::Arc;

use elmi::dataset::Dataset;
use elmi::el::{default_starts, mele, solve_lagrange};
use elmi::estfun::{linreg_fn, mean_fn};
use elmi::imputation::{impute, ExtendedSample, ImputationFile};
use elmi::inference::{chisq_mix_quantile, estimate_asymptotics};
use elmi::kernel::{KernelSpec, Smoother};
use elmi::linalg::RowMatrix;
use elmi::par::with_jobs;
use elmi::simulation::{run_study, Method, Scenario, StudyConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// One-covariate data with every third response missing.
fn with_missing(xs: &[f64], noise: &[f64]) -> Arc<Dataset> {
    let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
    let y: Vec<Option<Vec<f64>>> = xs
        .iter()
        .zip(noise)
        .enumerate()
        .map(|(i, (&a, &e))| (i % 3 != 1).then(|| vec![0.5 + a + e]))
        .collect();
    Arc::new(Dataset::from_rows(&x, &y).unwrap())
}

fn sample() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (12usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-1.0f64..1.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjusted_weights_form_a_distribution(
        (xs, noise) in sample(),
        order in prop::sample::select(vec![2u8, 4, 6]),
        h in 0.05f64..3.0,
        x_star in -4.0f64..4.0,
    ) {
        let d = with_missing(&xs, &noise);
        let k = KernelSpec::new(order, h).unwrap();
        let law = Smoother::new(&d).law_with_fallback(&k, &[x_star]);
        let w = law.weights();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let total = law.cdf(&[f64::INFINITY]);
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_el_ratio_is_nonnegative(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.5, 2), 6..60),
    ) {
        let sol = solve_lagrange(&RowMatrix::from_rows(&rows)).unwrap();
        prop_assert!(sol.logelr >= 0.0);
        if sol.feasible {
            let w = sol.weights();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn just_identified_mele_attains_zero((xs, noise) in sample()) {
        let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let y: Vec<Option<Vec<f64>>> = xs.iter().zip(&noise).map(|(a, e)| Some(vec![a * e + e])).collect();
        let es = ExtendedSample::complete(Arc::new(Dataset::from_rows(&x, &y).unwrap())).unwrap();
        let g = linreg_fn();
        let fit = mele(&es, &g, &default_starts(&es, &g)).unwrap();
        prop_assert!(fit.logelr.abs() < 1e-8);
    }

    #[test]
    fn imputation_file_round_trips((xs, noise) in sample(), seed in any::<u64>(), kappa in 1usize..8) {
        let d = with_missing(&xs, &noise);
        let es = impute(d.clone(), &KernelSpec::new(2, 0.4).unwrap(), kappa, seed).unwrap();
        let text = es.to_file_string("data.csv");
        let back = ExtendedSample::from_file(&ImputationFile::parse(&text).unwrap(), d).unwrap();
        prop_assert_eq!(back.to_file_string("data.csv"), text);
        let g = mean_fn(1).unwrap();
        let (a, b) = (es.estfun(&g, &[0.3]).unwrap(), back.estfun(&g, &[0.3]).unwrap());
        prop_assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn imputation_ignores_worker_count((xs, noise) in sample(), seed in any::<u64>()) {
        let d = with_missing(&xs, &noise);
        let k = KernelSpec::new(2, 0.5).unwrap();
        let one = with_jobs(Some(1), || impute(d.clone(), &k, 5, seed).unwrap().to_file_string("d"));
        let four = with_jobs(Some(4), || impute(d.clone(), &k, 5, seed).unwrap().to_file_string("d"));
        prop_assert_eq!(one, four);
    }

    #[test]
    fn full_data_omega_is_a_projection((xs, noise) in sample()) {
        let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let y: Vec<Option<Vec<f64>>> = xs.iter().zip(&noise).map(|(a, e)| Some(vec![a - e])).collect();
        let es = ExtendedSample::complete(Arc::new(Dataset::from_rows(&x, &y).unwrap())).unwrap();
        let g = linreg_fn();
        let fit = mele(&es, &g, &default_starts(&es, &g)).unwrap();
        let om = estimate_asymptotics(&es, &g, &fit.theta_hat, None).unwrap().omega;
        prop_assert!((om.trace() - 2.0).abs() < 1e-8);
        prop_assert!((&om * &om - &om).amax() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mixture_quantile_ignores_worker_count(seed in any::<u64>(), l in 0.1f64..3.0) {
        let om = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![l, 1.0]));
        let one = with_jobs(Some(1), || chisq_mix_quantile(&om, 0.05, 20_000, seed).unwrap());
        let four = with_jobs(Some(4), || chisq_mix_quantile(&om, 0.05, 20_000, seed).unwrap());
        prop_assert_eq!(one.to_bits(), four.to_bits());
    }

    #[test]
    fn mse_decomposes(seed in any::<u64>()) {
        let mut cfg = StudyConfig::new(Scenario::parse("mean-missing", 40).unwrap(), 12, seed);
        cfg.methods = vec![Method::Full, Method::Complete];
        cfg.ci_methods = vec![];
        let rep = run_study(&cfg).unwrap();
        for r in &rep.rows {
            prop_assert!((r.mse - (r.bias * r.bias + r.sd * r.sd)).abs() <= 1e-12 * r.mse.max(1e-12));
        }
    }
}
