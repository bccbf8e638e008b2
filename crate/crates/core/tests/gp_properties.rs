use gpct_core::gp::{kernel_eval, log_marginal_likelihood, optimize_hyperparameters, OptimizerOptions};
use gpct_core::training::stratified_subsample;
use gpct_core::{Hyperparameters, MultiGp, TrainingSet};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn set_from(points: &[(f64, f64, f64)]) -> TrainingSet {
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = points.iter().map(|&(a, b, y)| (vec![a, b], vec![y])).collect();
    TrainingSet::from_pairs(2, 1, &pairs).unwrap()
}

/// Posterior variance from the Schur complement of the joint covariance,
/// computed with a plain Gaussian-elimination solve.
fn schur_variance(set: &TrainingSet, phi: &Hyperparameters, x: &[f64]) -> f64 {
    let m = set.len();
    let k = |a: &[f64], b: &[f64]| kernel_eval(a, b, phi).unwrap();
    let mut gram = DMatrix::from_fn(m, m, |i, j| k(set.input(i), set.input(j)));
    for i in 0..m {
        gram[(i, i)] += phi.noise_variance;
    }
    let ks = nalgebra::DVector::from_fn(m, |i, _| k(set.input(i), x));
    let solved = gram.lu().solve(&ks).unwrap();
    k(x, x) - ks.dot(&solved)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
        l in 0.1f64..3.0,
        sf2 in 0.1f64..5.0,
    ) {
        let phi = Hyperparameters::new(l, sf2, 0.0).unwrap();
        let kab = kernel_eval(&a, &b, &phi).unwrap();
        prop_assert_eq!(kab, kernel_eval(&b, &a, &phi).unwrap());
        prop_assert!((0.0..=sf2).contains(&kab));
        prop_assert_eq!(kernel_eval(&a, &a, &phi).unwrap(), sf2);
    }

    #[test]
    fn variance_lies_between_zero_and_prior(
        points in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -1.0f64..1.0), 1..25),
        x in (-3.0f64..3.0, -3.0f64..3.0),
        l in 0.3f64..2.0,
        sn2 in 1e-3f64..0.5,
    ) {
        let set = set_from(&points);
        let phi = Hyperparameters::new(l, 1.5, sn2).unwrap();
        let gp = MultiGp::fit(&set, &[phi]).unwrap();
        let q = [x.0, x.1];
        let v = gp.predict_var(&q).unwrap()[0];
        prop_assert!((0.0..=1.5).contains(&v));
        let oracle = schur_variance(&set, &phi, &q).max(0.0);
        prop_assert!((v - oracle).abs() < 1e-9, "{} vs {}", v, oracle);
    }

    #[test]
    fn adding_data_never_increases_variance(
        points in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -1.0f64..1.0), 2..20),
        x in (-2.0f64..2.0, -2.0f64..2.0),
    ) {
        let phi = Hyperparameters::new(0.8, 1.0, 0.05).unwrap();
        let q = [x.0, x.1];
        let fewer = MultiGp::fit(&set_from(&points[..points.len() - 1]), &[phi]).unwrap();
        let more = MultiGp::fit(&set_from(&points), &[phi]).unwrap();
        prop_assert!(more.predict_var(&q).unwrap()[0] <= fewer.predict_var(&q).unwrap()[0] + 1e-12);
    }

    #[test]
    fn likelihood_gradient_matches_differences(
        points in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -1.0f64..1.0), 2..20),
        l in 0.4f64..2.0,
        sf2 in 0.3f64..3.0,
        ratio in 0.01f64..0.3,
    ) {
        let set = set_from(&points);
        let phi = Hyperparameters::new(l, sf2, ratio * sf2).unwrap();
        let g = log_marginal_likelihood(&set, &phi, 0).unwrap().gradient;
        let theta = phi.to_log_params();
        let h = 1e-5;
        for k in 0..3 {
            let at = |d: f64| {
                let mut t = theta;
                t[k] += d;
                log_marginal_likelihood(&set, &Hyperparameters::from_log_params(t), 0).unwrap().value
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            prop_assert!((g[k] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "component {}: {} vs {}", k, g[k], fd);
        }
    }

    #[test]
    fn subsample_takes_distinct_rows(m in 1usize..120, frac in 0.0f64..1.0, seed in 0u64..1000) {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..m).map(|i| (vec![i as f64], vec![0.0])).collect();
        let set = TrainingSet::from_pairs(1, 1, &pairs).unwrap();
        let size = ((m as f64) * frac) as usize;
        let sub = stratified_subsample(&set, size, seed).unwrap();
        prop_assert_eq!(sub.len(), size);
        let mut rows: Vec<f64> = (0..size).map(|i| sub.input(i)[0]).collect();
        rows.dedup();
        prop_assert_eq!(rows.len(), size);
        prop_assert_eq!(sub, stratified_subsample(&set, size, seed).unwrap());
    }
}

#[test]
fn optimizer_never_ends_below_its_start() {
    let points: Vec<(f64, f64, f64)> = (0..40)
        .map(|i| {
            let a = -2.0 + 0.1 * i as f64;
            let b = (0.37 * i as f64).sin();
            (a, b, (1.3 * a).sin() + 0.2 * b)
        })
        .collect();
    let set = set_from(&points);
    let start = Hyperparameters::new(3.0, 0.1, 0.05).unwrap();
    let before = log_marginal_likelihood(&set, &start, 0).unwrap().value;
    let report = optimize_hyperparameters(&set, 0, &start, &OptimizerOptions::default()).unwrap();
    assert!(report.log_likelihood >= before);
    assert!(report.trace.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn subsample_larger_than_set_is_rejected() {
    let set = set_from(&[(0.0, 0.0, 1.0), (1.0, 0.0, 2.0)]);
    assert!(stratified_subsample(&set, 3, 0).is_err());
}
