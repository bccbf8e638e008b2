use std::sync::Arc;

use gpct_core::control::{computed_torque, ct_gp_control, Controller, Gains, GpMode, ReferenceSample};
use gpct_core::sim::{run_ensemble, simulate, Integrator, SimConfig, SinusoidReference};
use gpct_core::training::{generate_open_loop, true_residual, OpenLoopPlan};
use gpct_core::{Hyperparameters, JointState, MultiGp, TrainingSet, TwoLinkArm, WingModel};
use nalgebra::DVector;
use proptest::prelude::*;

fn wing_setup() -> (WingModel, Arc<WingModel>, Gains, SinusoidReference) {
    let truth = WingModel::standard();
    let estimate = Arc::new(truth.pendulum_estimate(0.9, 0.9));
    let gains = Gains::diagonal(&[5.0], &[5.0]).unwrap();
    let reference = SinusoidReference::new(vec![0.5], vec![1.0], vec![0.0], false).unwrap();
    (truth, estimate, gains, reference)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn empty_gp_law_is_computed_torque(q in -3.0f64..3.0, qd in -3.0f64..3.0, t in 0.0f64..10.0) {
        let (_, estimate, gains, reference) = wing_setup();
        let gp = MultiGp::fit(&TrainingSet::empty(3, 1), &[Hyperparameters::new(1.0, 1.0, 0.01).unwrap()]).unwrap();
        let s = JointState::new(DVector::from_element(1, q), DVector::from_element(1, qd));
        let r = reference.sample(t);
        let gp_law = ct_gp_control(estimate.as_ref(), &gp, &gains, &s, &r, GpMode::Deterministic, None).unwrap();
        prop_assert_eq!(gp_law.torque, computed_torque(estimate.as_ref(), &gains, &s, &r).torque);
    }

    #[test]
    fn computed_torque_is_pure_feedback_at_a_resting_reference(
        q in (-3.0f64..3.0, -3.0f64..3.0),
        qd in (-3.0f64..3.0, -3.0f64..3.0),
    ) {
        let gains = Gains::diagonal(&[20.0, 15.0], &[5.0, 4.0]).unwrap();
        let arm = TwoLinkArm::rigid();
        let r = ReferenceSample {
            q: DVector::zeros(2),
            qd: DVector::zeros(2),
            qdd: DVector::zeros(2),
        };
        let s = JointState::new(DVector::from_vec(vec![q.0, q.1]), DVector::from_vec(vec![qd.0, qd.1]));
        let tau = computed_torque(&arm, &gains, &s, &r).torque;
        let expected = DVector::from_vec(vec![-20.0 * q.0 - 5.0 * qd.0, -15.0 * q.1 - 4.0 * qd.1]);
        prop_assert!((tau - expected).amax() < 1e-12);
    }
}

#[test]
fn exact_residual_model_removes_the_offset() {
    let (truth, estimate, gains, reference) = wing_setup();
    let config = SimConfig {
        duration: 4.0,
        ..SimConfig::default()
    };
    let initial = JointState::at_rest(DVector::zeros(1));
    let ct = Controller::ComputedTorque {
        model: estimate.clone(),
        gains: gains.clone(),
    };
    let base = simulate(&truth, &ct, &reference, &config, &initial, 0).unwrap().rmse(1.0)[0];

    let plan = OpenLoopPlan::grid_1d((-8.0, 8.0), 21, (-1.0, 1.0), 15);
    let data = generate_open_loop(&plan, &truth, estimate.as_ref()).unwrap();
    // the labels really are the model residual
    for i in (0..data.set.len()).step_by(37) {
        let r = true_residual(&truth, estimate.as_ref(), data.set.input(i));
        assert!((r[0] - data.set.outputs()[(i, 0)]).abs() < 1e-9);
    }

    // exact residuals around the reference manifold, where the law queries
    let mut pairs = Vec::new();
    for i in 0..80 {
        let r = reference.sample(i as f64 * 0.08);
        for dq in [-0.3, -0.1, 0.0, 0.1, 0.3] {
            let x = vec![r.qdd[0], r.qd[0], r.q[0] + dq];
            let y = true_residual(&truth, estimate.as_ref(), &x)[0];
            pairs.push((x, vec![y]));
        }
    }
    let set = TrainingSet::from_pairs(3, 1, &pairs).unwrap();
    let gp = MultiGp::fit(&set, &[Hyperparameters::new(0.5, 4.0, 1e-6).unwrap()]).unwrap();
    let ctgp = Controller::CtGp {
        model: estimate,
        gp: Arc::new(gp),
        gains,
        mode: GpMode::Deterministic,
    };
    let learned = simulate(&truth, &ctgp, &reference, &config, &initial, 0).unwrap().rmse(1.0)[0];
    assert!(learned < base / 3.0, "ct {base} ct-gp {learned}");
}

#[test]
fn ensembles_are_reproducible_and_seeded() {
    let (truth, estimate, gains, reference) = wing_setup();
    let data = generate_open_loop(&OpenLoopPlan::grid_1d((-8.0, 8.0), 5, (-1.0, 1.0), 6), &truth, estimate.as_ref()).unwrap();
    let gp = MultiGp::fit(&data.set, &[Hyperparameters::new(1.0, 1.0, 1e-2).unwrap()]).unwrap();
    let controller = Controller::CtGp {
        model: estimate,
        gp: Arc::new(gp),
        gains,
        mode: GpMode::Stochastic,
    };
    let config = SimConfig {
        duration: 1.0,
        integrator: Integrator::EulerMaruyama,
        realizations: 4,
        base_seed: 3,
        ..SimConfig::default()
    };
    let initial = JointState::at_rest(DVector::zeros(1));
    let a = run_ensemble(&truth, &controller, &reference, &config, &initial).unwrap();
    let b = run_ensemble(&truth, &controller, &reference, &config, &initial).unwrap();
    assert_eq!(a.stats, b.stats);
    assert_eq!(a.runs[1].q, simulate(&truth, &controller, &reference, &config, &initial, 4).unwrap().q);
    assert_ne!(a.runs[0].q, a.runs[1].q);
    assert!(a.stats.std_defined && a.stats.std_q.iter().skip(1).any(|&s| s > 0.0));
}
