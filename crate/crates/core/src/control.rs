//! PD, computed-torque and GP-compensated computed-torque control laws, plus
//! the numeric checks on the trajectory bound, gain condition and model-error
//! bound.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{JointState, ManipulatorModel};
use crate::error::{Error, Result};
use crate::gp::MultiGp;

/// Positive-definite feedback gains `K_p`, `K_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    kp: DMatrix<f64>,
    kd: DMatrix<f64>,
}

impl Gains {
    pub fn new(kp: DMatrix<f64>, kd: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("K_p", &kp), ("K_d", &kd)] {
            if !m.is_square() || (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::Domain(format!("{name} must be square and symmetric")));
            }
            if m.clone().cholesky().is_none() {
                return Err(Error::Domain(format!("{name} must be positive definite")));
            }
        }
        if kp.nrows() != kd.nrows() {
            return Err(Error::DimensionMismatch {
                expected: kp.nrows(),
                actual: kd.nrows(),
                context: "K_d size vs K_p size",
            });
        }
        Ok(Self { kp, kd })
    }

    pub fn diagonal(kp: &[f64], kd: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(kp)),
            DMatrix::from_diagonal(&DVector::from_column_slice(kd)),
        )
    }

    pub fn kp(&self) -> &DMatrix<f64> {
        &self.kp
    }

    pub fn kd(&self) -> &DMatrix<f64> {
        &self.kd
    }

    pub fn dof(&self) -> usize {
        self.kp.nrows()
    }

    pub fn sigma_min_kd(&self) -> f64 {
        self.kd.singular_values().min()
    }

    fn feedback(&self, state: &JointState, reference: &ReferenceSample) -> DVector<f64> {
        let e = &state.q - &reference.q;
        let ed = &state.qd - &reference.qd;
        -(&self.kd * ed) - &self.kp * e
    }
}

/// Desired position, velocity and acceleration at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
}

/// `q_c = [q̈_d; q̇_d; q]`: desired acceleration and velocity, measured
/// position. The regression is queried here so no measured acceleration is
/// fed back.
pub fn gp_input(state: &JointState, reference: &ReferenceSample) -> Vec<f64> {
    reference
        .qdd
        .iter()
        .chain(reference.qd.iter())
        .chain(state.q.iter())
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    /// Applied torque. In stochastic mode this is `drift + diffusion ⊙ noise`
    /// when a noise sample was supplied, otherwise the drift.
    pub torque: DVector<f64>,
    pub drift: DVector<f64>,
    /// Diagonal of `Σ(q_c)`, zero for deterministic laws.
    pub diffusion: DVector<f64>,
    pub gp_mean: DVector<f64>,
    pub gp_std: DVector<f64>,
}

impl ControlOutput {
    fn deterministic(torque: DVector<f64>) -> Self {
        let n = torque.len();
        Self {
            drift: torque.clone(),
            torque,
            diffusion: DVector::zeros(n),
            gp_mean: DVector::zeros(n),
            gp_std: DVector::zeros(n),
        }
    }
}

/// `τ = −K_p e − K_d ė`, no model.
pub fn pd_control(gains: &Gains, state: &JointState, reference: &ReferenceSample) -> ControlOutput {
    ControlOutput::deterministic(gains.feedback(state, reference))
}

fn model_feedforward(model: &dyn ManipulatorModel, state: &JointState, reference: &ReferenceSample) -> DVector<f64> {
    model.mass_matrix(&state.q) * &reference.qdd
        + model.coriolis_matrix(&state.q, &state.qd) * &reference.qd
        + model.gravity_vector(&state.q, &state.qd)
}

/// `τ = Ĥ(q) q̈_d + Ĉ(q, q̇) q̇_d + ĝ(q) − K_d ė − K_p e`.
pub fn computed_torque(model: &dyn ManipulatorModel, gains: &Gains, state: &JointState, reference: &ReferenceSample) -> ControlOutput {
    ControlOutput::deterministic(model_feedforward(model, state, reference) + gains.feedback(state, reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpMode {
    /// Feed forward the posterior mean only.
    Deterministic,
    /// Posterior mean as drift, posterior standard deviation as diffusion.
    Stochastic,
}

/// Computed torque plus the regression term `f_GP(q_c)`.
///
/// With an empty training set the deterministic law is exactly
/// [`computed_torque`] since the prior mean is zero.
pub fn ct_gp_control(
    model: &dyn ManipulatorModel,
    gp: &MultiGp,
    gains: &Gains,
    state: &JointState,
    reference: &ReferenceSample,
    mode: GpMode,
    noise: Option<&DVector<f64>>,
) -> Result<ControlOutput> {
    let n = state.q.len();
    if gp.input_dim() != 3 * n || gp.output_dim() != n {
        return Err(Error::DimensionMismatch {
            expected: 3 * n,
            actual: gp.input_dim(),
            context: "GP input dimension vs 3 x joint count",
        });
    }
    if mode == GpMode::Deterministic && gp.is_empty() {
        return Ok(computed_torque(model, gains, state, reference));
    }
    let query = gp_input(state, reference);
    let (mean, std) = match mode {
        GpMode::Deterministic => (gp.predict_mean(&query)?, DVector::zeros(n)),
        GpMode::Stochastic => {
            let p = gp.predict(&query)?;
            (p.mean, p.std)
        }
    };
    let drift = model_feedforward(model, state, reference) + &mean + gains.feedback(state, reference);
    let torque = match noise {
        Some(xi) if mode == GpMode::Stochastic => &drift + std.component_mul(xi),
        _ => drift.clone(),
    };
    let diffusion = if mode == GpMode::Stochastic { std.clone() } else { DVector::zeros(n) };
    Ok(ControlOutput {
        torque,
        drift,
        diffusion,
        gp_mean: mean,
        gp_std: std,
    })
}

/// A control law bound to its models, as the simulator uses it.
#[derive(Debug, Clone)]
pub enum Controller {
    Pd {
        gains: Gains,
    },
    ComputedTorque {
        model: Arc<dyn ManipulatorModel>,
        gains: Gains,
    },
    CtGp {
        model: Arc<dyn ManipulatorModel>,
        gp: Arc<MultiGp>,
        gains: Gains,
        mode: GpMode,
    },
}

impl Controller {
    pub fn gains(&self) -> &Gains {
        match self {
            Controller::Pd { gains } | Controller::ComputedTorque { gains, .. } | Controller::CtGp { gains, .. } => gains,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Controller::CtGp { mode: GpMode::Stochastic, .. })
    }

    /// Drift/diffusion pair at `state`; `noise` is only used by the
    /// stochastic law.
    pub fn evaluate(&self, state: &JointState, reference: &ReferenceSample, noise: Option<&DVector<f64>>) -> Result<ControlOutput> {
        match self {
            Controller::Pd { gains } => Ok(pd_control(gains, state, reference)),
            Controller::ComputedTorque { model, gains } => Ok(computed_torque(model.as_ref(), gains, state, reference)),
            Controller::CtGp { model, gp, gains, mode } => ct_gp_control(model.as_ref(), gp, gains, state, reference, *mode, noise),
        }
    }
}

/// Norm bounds on the desired trajectory: `‖q_d‖ ≤ c_q` and so on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceBounds {
    pub c_q: f64,
    pub c_qd: f64,
    pub c_qdd: f64,
}

/// Affine bound `‖τ̃‖ ≤ α + β ‖q̇‖` fitted to sampled residuals. Sampled, not
/// certified.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelErrorBound {
    pub alpha: f64,
    pub beta: f64,
    /// Residual grew faster than linearly along at least one probe ray.
    pub super_linear: bool,
    /// `(‖q̇‖, r)` for every evaluated probe point.
    pub samples: Vec<(f64, f64)>,
}

impl ModelErrorBound {
    pub fn covers(&self, speed: f64, residual: f64) -> bool {
        residual <= self.alpha + self.beta * speed
    }
}

fn sample_ball(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut u = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
    let norm = u.norm();
    if norm > 1.0 {
        u /= norm;
    }
    u * radius
}

/// Residual `‖(H−Ĥ)q̈_d + (C−Ĉ)q̇_d + g − ĝ‖` at a state.
pub fn model_residual(truth: &dyn ManipulatorModel, estimate: &dyn ManipulatorModel, state: &JointState, reference: &ReferenceSample) -> f64 {
    (model_feedforward(truth, state, reference) - model_feedforward(estimate, state, reference)).norm()
}

/// Fits `α`, `β` by probing rays in velocity space.
///
/// Each probe draws a position in `[-π, π]ⁿ`, desired velocity and
/// acceleration inside the `c_q̇`, `c_q̈` balls, a velocity direction and a
/// speed up to `max_speed`, and evaluates the residual at rest, half speed and
/// full speed. `β` is the steepest growth from rest seen along any ray; `α`
/// is then the smallest offset covering every evaluated point.
pub fn estimate_error_bound(
    truth: &dyn ManipulatorModel,
    estimate: &dyn ManipulatorModel,
    bounds: &ReferenceBounds,
    max_speed: f64,
    probe_count: usize,
    seed: u64,
) -> Result<ModelErrorBound> {
    if !(bounds.c_q.is_finite() && bounds.c_qd.is_finite() && bounds.c_qdd.is_finite() && max_speed.is_finite()) {
        return Err(Error::Domain("reference bounds must be finite".into()));
    }
    let n = truth.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = std::f64::consts::PI;
    let mut samples = Vec::with_capacity(3 * probe_count);
    let mut beta: f64 = 0.0;
    let mut super_linear = false;
    for _ in 0..probe_count {
        let q = DVector::from_fn(n, |_, _| rng.random_range(-pi..=pi));
        let reference = ReferenceSample {
            q: q.clone(),
            qd: sample_ball(n, bounds.c_qd, &mut rng),
            qdd: sample_ball(n, bounds.c_qdd, &mut rng),
        };
        let mut dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        dir /= norm;
        let speed = rng.random_range(0.0..=max_speed);
        let r = |s: f64| model_residual(truth, estimate, &JointState::new(q.clone(), &dir * s), &reference);
        let (r0, r_half, r_full) = (r(0.0), r(0.5 * speed), r(speed));
        samples.extend([(0.0, r0), (0.5 * speed, r_half), (speed, r_full)]);
        if speed > 0.0 {
            beta = beta.max((r_full - r0) / speed);
            let chord = 0.5 * (r0 + r_full);
            if r_half < chord - 1e-6 * (1.0 + chord.abs()) && r_full > r0 + 1e-9 {
                super_linear = true;
            }
        }
    }
    let mut alpha = samples.iter().map(|&(s, r)| r - beta * s).fold(0.0, f64::max);
    // rounding can leave α + βs a hair below r
    while samples.iter().any(|&(s, r)| r > alpha + beta * s) {
        alpha = alpha.next_up();
    }
    Ok(ModelErrorBound {
        alpha,
        beta,
        super_linear,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub bounds: ReferenceBounds,
    pub sigma_min_kd: f64,
    pub beta: f64,
    /// Reference bounds finite.
    pub c1: bool,
    /// Gains positive definite (guaranteed by [`Gains`]).
    pub gains_positive_definite: bool,
    /// `σ_min(K_d) > β`.
    pub c2: bool,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.c1 && self.gains_positive_definite && self.c2
    }
}

pub fn verify_conditions(gains: &Gains, bound: &ModelErrorBound, bounds: &ReferenceBounds) -> ConditionReport {
    let sigma_min_kd = gains.sigma_min_kd();
    ConditionReport {
        bounds: *bounds,
        sigma_min_kd,
        beta: bound.beta,
        c1: bounds.c_q.is_finite() && bounds.c_qd.is_finite() && bounds.c_qdd.is_finite(),
        gains_positive_definite: gains.kp.clone().cholesky().is_some() && gains.kd.clone().cholesky().is_some(),
        c2: sigma_min_kd > bound.beta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{forward_dynamics, Friction, TwoLinkArm, WingModel};
    use crate::gp::{Hyperparameters, TrainingSet};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn still(n: usize) -> (JointState, ReferenceSample) {
        (
            JointState::at_rest(DVector::zeros(n)),
            ReferenceSample {
                q: DVector::zeros(n),
                qd: DVector::zeros(n),
                qdd: DVector::zeros(n),
            },
        )
    }

    #[test]
    fn pd_examples() {
        let (mut s, r) = still(2);
        assert_eq!(pd_control(&Gains::diagonal(&[800.0, 600.0], &[5.0, 5.0]).unwrap(), &s, &r).torque, v(&[0.0, 0.0]));
        s.q[0] = 0.1;
        let hg = Gains::diagonal(&[800.0, 600.0], &[5.0, 5.0]).unwrap();
        let lg = Gains::diagonal(&[20.0, 15.0], &[5.0, 5.0]).unwrap();
        assert!((pd_control(&hg, &s, &r).torque - v(&[-80.0, 0.0])).amax() < 1e-12);
        assert!((pd_control(&lg, &s, &r).torque - v(&[-2.0, 0.0])).amax() < 1e-12);
    }

    #[test]
    fn gains_must_be_positive_definite() {
        assert!(Gains::diagonal(&[1.0, -1.0], &[1.0, 1.0]).is_err());
        assert!(Gains::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), DMatrix::identity(2, 2)).is_err());
        assert_eq!(Gains::diagonal(&[3.0, 1.0], &[5.0, 0.5]).unwrap().sigma_min_kd(), 0.5);
    }

    #[test]
    fn computed_torque_examples() {
        let est = WingModel::standard().pendulum_estimate(0.9, 0.9);
        let gains = Gains::diagonal(&[5.0], &[5.0]).unwrap();
        let (s, mut r) = still(1);
        assert_eq!(computed_torque(&est, &gains, &s, &r).torque[0], 0.0);
        r.qdd[0] = 1.0;
        assert!((computed_torque(&est, &gains, &s, &r).torque[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn perfect_model_cancels_dynamics() {
        let arm = TwoLinkArm::surrogate_true();
        let gains = Gains::diagonal(&[20.0, 15.0], &[5.0, 5.0]).unwrap();
        let s = JointState::new(v(&[0.2, -0.3]), v(&[1.0, 0.5]));
        let r = ReferenceSample {
            q: s.q.clone(),
            qd: s.qd.clone(),
            qdd: v(&[3.0, -2.0]),
        };
        let tau = computed_torque(&arm, &gains, &s, &r).torque;
        let qdd = forward_dynamics(&arm, &s, &tau).unwrap();
        assert!((qdd - &r.qdd).amax() < 1e-10);
    }

    #[test]
    fn empty_gp_reduces_to_computed_torque() {
        let est = WingModel::standard().pendulum_estimate(0.9, 0.9);
        let gains = Gains::diagonal(&[5.0], &[5.0]).unwrap();
        let gp = MultiGp::fit(&TrainingSet::empty(3, 1), &[Hyperparameters::new(1.0, 1.0, 0.01).unwrap()]).unwrap();
        let s = JointState::new(v(&[0.3]), v(&[-0.2]));
        let r = ReferenceSample {
            q: v(&[0.1]),
            qd: v(&[0.4]),
            qdd: v(&[-0.7]),
        };
        let ct = computed_torque(&est, &gains, &s, &r);
        let det = ct_gp_control(&est, &gp, &gains, &s, &r, GpMode::Deterministic, None).unwrap();
        assert_eq!(det.torque.as_slice(), ct.torque.as_slice());
        let sto = ct_gp_control(&est, &gp, &gains, &s, &r, GpMode::Stochastic, Some(&v(&[0.0]))).unwrap();
        assert_eq!(sto.torque, ct.torque);
        assert_eq!(sto.diffusion[0], 1.0);
    }

    #[test]
    fn stochastic_with_zero_noise_matches_deterministic() {
        let est = WingModel::standard().pendulum_estimate(0.9, 0.9);
        let gains = Gains::diagonal(&[5.0], &[5.0]).unwrap();
        let data = TrainingSet::from_pairs(3, 1, &[(vec![0.0, 0.0, 0.0], vec![0.5]), (vec![1.0, 0.5, 0.2], vec![-0.3])]).unwrap();
        let gp = MultiGp::fit(&data, &[Hyperparameters::new(1.0, 1.0, 0.01).unwrap()]).unwrap();
        let s = JointState::new(v(&[0.3]), v(&[-0.2]));
        let r = ReferenceSample {
            q: v(&[0.1]),
            qd: v(&[0.4]),
            qdd: v(&[-0.7]),
        };
        let det = ct_gp_control(&est, &gp, &gains, &s, &r, GpMode::Deterministic, None).unwrap();
        let sto = ct_gp_control(&est, &gp, &gains, &s, &r, GpMode::Stochastic, Some(&v(&[0.0]))).unwrap();
        assert_eq!(det.torque, sto.torque);
        assert!(sto.diffusion[0] > 0.0);
        let bad = MultiGp::fit(&TrainingSet::empty(2, 1), &[Hyperparameters::new(1.0, 1.0, 0.01).unwrap()]).unwrap();
        assert!(ct_gp_control(&est, &bad, &gains, &s, &r, GpMode::Deterministic, None).is_err());
    }

    #[test]
    fn error_bound_examples() {
        let bounds = ReferenceBounds { c_q: 1.0, c_qd: 1.0, c_qdd: 2.0 };
        let truth = WingModel::standard().without_air();
        let b = estimate_error_bound(&truth, &truth, &bounds, 5.0, 200, 1).unwrap();
        assert_eq!((b.alpha, b.beta), (0.0, 0.0));

        let est = truth.pendulum_estimate(0.9, 0.9);
        let b = estimate_error_bound(&truth, &est, &bounds, 5.0, 2000, 1).unwrap();
        assert_eq!(b.beta, 0.0);
        let hand = 0.1 * (bounds.c_qdd + 9.81);
        assert!(b.alpha <= hand + 1e-12 && b.alpha > 0.95 * hand, "alpha {}", b.alpha);
        assert!(b.samples.iter().all(|&(s, r)| b.covers(s, r)));

        let arm = TwoLinkArm::surrogate_true();
        let frictionless = TwoLinkArm {
            friction: Some(Friction {
                viscous: [0.0, 0.0],
                coulomb: [0.0, 0.0],
                smoothing: 1.0,
            }),
            ..arm.clone()
        };
        let b = estimate_error_bound(&arm, &frictionless, &bounds, 10.0, 500, 2).unwrap();
        assert!(b.beta >= 0.2 - 1e-12, "beta {}", b.beta);
        assert!(!b.super_linear);
    }

    #[test]
    fn conditions() {
        let bound = ModelErrorBound {
            alpha: 1.0,
            beta: 0.2,
            super_linear: false,
            samples: vec![],
        };
        let bounds = ReferenceBounds { c_q: 1.0, c_qd: 1.0, c_qdd: 1.0 };
        assert!(verify_conditions(&Gains::diagonal(&[5.0, 5.0], &[5.0, 5.0]).unwrap(), &bound, &bounds).passed());
        let weak = verify_conditions(&Gains::diagonal(&[5.0, 5.0], &[0.1, 0.1]).unwrap(), &bound, &bounds);
        assert!(!weak.c2 && !weak.passed());
    }
}
