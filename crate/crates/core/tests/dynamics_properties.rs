use gpct_core::dynamics::{forward_dynamics, ManipulatorModel};
use gpct_core::sim::rk4_step;
use gpct_core::{JointState, TwoLinkArm, WingModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn v2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_vec(vec![a, b])
}

/// Closed-form mass matrix of a planar two-link arm with rod links.
fn textbook_mass(arm: &TwoLinkArm, q2: f64) -> DMatrix<f64> {
    let [m1, m2] = arm.masses;
    let [l1, _] = arm.lengths;
    let [c1, c2] = arm.com;
    let [i1, i2] = arm.inertias;
    let h11 = m1 * c1 * c1 + i1 + m2 * (l1 * l1 + c2 * c2 + 2.0 * l1 * c2 * q2.cos()) + i2;
    let h12 = m2 * (c2 * c2 + l1 * c2 * q2.cos()) + i2;
    let h22 = m2 * c2 * c2 + i2;
    DMatrix::from_row_slice(2, 2, &[h11, h12, h12, h22])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mass_matrix_matches_closed_form(q1 in -3.2f64..3.2, q2 in -3.2f64..3.2) {
        let arm = TwoLinkArm::surrogate_true();
        let h = arm.mass_matrix(&v2(q1, q2));
        prop_assert!((h - textbook_mass(&arm, q2)).amax() < 1e-12);
    }

    #[test]
    fn hdot_minus_two_c_is_skew(
        q in (-3.0f64..3.0, -3.0f64..3.0),
        qd in (-4.0f64..4.0, -4.0f64..4.0),
    ) {
        let arm = TwoLinkArm::surrogate_true();
        let (q, qd) = (v2(q.0, q.1), v2(qd.0, qd.1));
        let eps = 1e-6;
        let hdot = (arm.mass_matrix(&(&q + &qd * eps)) - arm.mass_matrix(&(&q - &qd * eps))) / (2.0 * eps);
        let n = hdot - arm.coriolis_matrix(&q, &qd) * 2.0;
        prop_assert!((&n + n.transpose()).amax() < 1e-7);
    }

    #[test]
    fn forward_then_inverse_dynamics_round_trips(
        q in (-3.0f64..3.0, -3.0f64..3.0),
        qd in (-4.0f64..4.0, -4.0f64..4.0),
        tau in (-5.0f64..5.0, -5.0f64..5.0),
    ) {
        let arm = TwoLinkArm::surrogate_true();
        let s = JointState::new(v2(q.0, q.1), v2(qd.0, qd.1));
        let tau = v2(tau.0, tau.1);
        let qdd = forward_dynamics(&arm, &s, &tau).unwrap();
        prop_assert!((arm.inverse_dynamics(&s, &qdd) - tau).amax() < 1e-9);
    }

    #[test]
    fn wing_round_trips_through_the_stall(q in -3.1f64..3.1, qd in -3.0f64..3.0, tau in -8.0f64..8.0) {
        let wing = WingModel::standard();
        let s = JointState::new(DVector::from_element(1, q), DVector::from_element(1, qd));
        let tau = DVector::from_element(1, tau);
        let qdd = forward_dynamics(&wing, &s, &tau).unwrap();
        prop_assert!((wing.inverse_dynamics(&s, &qdd) - tau).amax() < 1e-12);
    }
}

#[test]
fn free_arm_conserves_kinetic_energy() {
    let arm = TwoLinkArm::rigid();
    let zero = DVector::zeros(2);
    let mut s = JointState::new(v2(0.3, -0.8), v2(1.5, -2.0));
    let e0 = arm.kinetic_energy(&s.q, &s.qd);
    let dt = 1e-4;
    for _ in 0..10_000 {
        let k1 = forward_dynamics(&arm, &s, &zero).unwrap();
        s = rk4_step(&s, k1, dt, |_, st| forward_dynamics(&arm, st, &zero)).unwrap();
    }
    let drift = (arm.kinetic_energy(&s.q, &s.qd) - e0).abs() / e0;
    assert!(drift < 1e-6, "relative drift {drift:e}");
}

#[test]
fn rk4_is_fourth_order_on_the_pendulum() {
    let pendulum = WingModel::standard().without_air();
    let zero = DVector::zeros(1);
    let endpoint = |dt: f64| {
        let mut s = JointState::at_rest(DVector::from_element(1, 1.2));
        for _ in 0..(1.0 / dt).round() as usize {
            let k1 = forward_dynamics(&pendulum, &s, &zero).unwrap();
            s = rk4_step(&s, k1, dt, |_, st| forward_dynamics(&pendulum, st, &zero)).unwrap();
        }
        s.q[0]
    };
    let exact = endpoint(1e-4);
    let ratio = (endpoint(0.02) - exact).abs() / (endpoint(0.01) - exact).abs();
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}
