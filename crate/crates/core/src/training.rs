//! Training-set generation: excite the true plant, record `(q̈, q̇, q)` and
//! the torque the estimated model fails to explain.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::control::Controller;
use crate::dynamics::{forward_dynamics, JointState, ManipulatorModel};
use crate::error::{Error, Result};
use crate::gp::TrainingSet;
use crate::sim::{rk4_step, simulate, Integrator, SimConfig, SinusoidReference, DIVERGENCE_LIMIT};

/// Additive Gaussian noise on the recorded positions and velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SensorNoise {
    /// rad
    pub q_std: f64,
    /// rad/s
    pub qd_std: f64,
}

impl SensorNoise {
    fn is_zero(&self) -> bool {
        self.q_std == 0.0 && self.qd_std == 0.0
    }

    fn corrupt(&self, state: &mut JointState, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.is_zero() {
            return Ok(());
        }
        let nq = Normal::new(0.0, self.q_std).map_err(|e| Error::Config(format!("sensor noise: {e}")))?;
        let nqd = Normal::new(0.0, self.qd_std).map_err(|e| Error::Config(format!("sensor noise: {e}")))?;
        for v in state.q.iter_mut() {
            *v += nq.sample(rng);
        }
        for v in state.qd.iter_mut() {
            *v += nqd.sample(rng);
        }
        Ok(())
    }
}

/// Constant torque applied from rest, one cell per (torque, start position).
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopPlan {
    pub torques: Vec<DVector<f64>>,
    pub positions: Vec<DVector<f64>>,
    /// s
    pub hold: f64,
    /// s
    pub dt: f64,
    pub noise: SensorNoise,
    pub seed: u64,
}

impl OpenLoopPlan {
    /// Regular single-joint grid: `torque_count` values on `torque_range`
    /// times `position_count` values on `position_range`.
    pub fn grid_1d(torque_range: (f64, f64), torque_count: usize, position_range: (f64, f64), position_count: usize) -> Self {
        let scalar = |v: f64| DVector::from_element(1, v);
        Self {
            torques: linspace(torque_range.0, torque_range.1, torque_count).into_iter().map(scalar).collect(),
            positions: linspace(position_range.0, position_range.1, position_count).into_iter().map(scalar).collect(),
            hold: 0.5,
            dt: 1e-3,
            noise: SensorNoise::default(),
            seed: 0,
        }
    }

    /// 33 torques on [−8, 8] N·m by 30 start angles on [−π, π].
    pub fn wing_default() -> Self {
        let pi = std::f64::consts::PI;
        Self::grid_1d((-8.0, 8.0), 33, (-pi, pi), 30)
    }

    pub fn cell_count(&self) -> usize {
        self.torques.len() * self.positions.len()
    }

    fn validate(&self, dof: usize) -> Result<()> {
        if self.torques.is_empty() || self.positions.is_empty() {
            return Err(Error::Config("excitation grids must not be empty".into()));
        }
        if !(self.hold > 0.0) || !(self.dt > 0.0) {
            return Err(Error::Config("hold duration and dt must be positive".into()));
        }
        if self.torques.iter().chain(&self.positions).any(|v| v.len() != dof) {
            return Err(Error::Config(format!("excitation grid entries must have {dof} components")));
        }
        Ok(())
    }
}

/// Sampling a stabilising controller while it tracks a reference.
#[derive(Debug, Clone)]
pub struct ClosedLoopPlan {
    pub controller: Controller,
    pub reference: SinusoidReference,
    /// s
    pub sample_period: f64,
    pub sample_count: usize,
    /// s
    pub dt: f64,
    /// s
    pub duration: f64,
    /// Defaults to the reference state at `t = 0` when `None`.
    pub initial: Option<JointState>,
    pub noise: SensorNoise,
    pub seed: u64,
}

impl ClosedLoopPlan {
    pub fn new(controller: Controller, reference: SinusoidReference) -> Self {
        Self {
            controller,
            reference,
            sample_period: 0.03,
            sample_count: 351,
            dt: 1e-3,
            duration: 0.03 * 351.0,
            initial: None,
            noise: SensorNoise {
                q_std: 1e-3,
                qd_std: 1e-2,
            },
            seed: 0,
        }
    }

    fn steps_per_sample(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.sample_period > 0.0) || self.sample_count == 0 {
            return Err(Error::Config("closed-loop plan needs dt > 0, sample period > 0 and at least one sample".into()));
        }
        let ratio = self.sample_period / self.dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "sample period {} is not a whole number of time steps {}",
                self.sample_period, self.dt
            )));
        }
        if self.sample_count as f64 * self.sample_period > self.duration * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!(
                "{} samples every {} s need {} s but the run lasts {} s",
                self.sample_count,
                self.sample_period,
                self.sample_count as f64 * self.sample_period,
                self.duration
            )));
        }
        Ok(steps as usize)
    }
}

#[derive(Debug, Clone)]
pub enum ExcitationPlan {
    OpenLoop(OpenLoopPlan),
    ClosedLoop(ClosedLoopPlan),
}

/// A generated set plus what is needed to audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub set: TrainingSet,
    /// Torque applied at each emitted sample, in row order.
    pub applied: Vec<DVector<f64>>,
    pub dropped: usize,
    pub provenance: String,
}

/// Training input `[q̈; q̇; q]`.
pub fn stack_input(qdd: &DVector<f64>, state: &JointState) -> Vec<f64> {
    qdd.iter().chain(state.qd.iter()).chain(state.q.iter()).copied().collect()
}

/// `τ − (Ĥ q̈ + Ĉ q̇ + ĝ)`.
pub fn residual(estimate: &dyn ManipulatorModel, state: &JointState, qdd: &DVector<f64>, applied: &DVector<f64>) -> DVector<f64> {
    applied - estimate.inverse_dynamics(state, qdd)
}

/// The residual an ideal learner would converge to at `x = [q̈; q̇; q]`.
pub fn true_residual(truth: &dyn ManipulatorModel, estimate: &dyn ManipulatorModel, x: &[f64]) -> DVector<f64> {
    let n = truth.dof();
    let qdd = DVector::from_column_slice(&x[..n]);
    let state = JointState::new(DVector::from_column_slice(&x[2 * n..3 * n]), DVector::from_column_slice(&x[n..2 * n]));
    truth.inverse_dynamics(&state, &qdd) - estimate.inverse_dynamics(&state, &qdd)
}

pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

fn diverged(state: &JointState) -> bool {
    state.q.iter().chain(state.qd.iter()).any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

struct Sample {
    input: Vec<f64>,
    output: Vec<f64>,
    applied: DVector<f64>,
}

fn assemble(samples: Vec<Option<Sample>>, input_dim: usize, output_dim: usize, provenance: String) -> Result<GeneratedData> {
    let total = samples.len();
    let kept: Vec<Sample> = samples.into_iter().flatten().collect();
    let dropped = total - kept.len();
    let mut pairs = Vec::with_capacity(kept.len());
    let mut applied = Vec::with_capacity(kept.len());
    for s in kept {
        pairs.push((s.input, s.output));
        applied.push(s.applied);
    }
    let set = TrainingSet::from_pairs(input_dim, output_dim, &pairs)?;
    let mut provenance = provenance;
    let _ = writeln!(provenance, "samples = {}", set.len());
    let _ = writeln!(provenance, "dropped = {dropped}");
    Ok(GeneratedData {
        set,
        applied,
        dropped,
        provenance,
    })
}

/// Holds each torque from rest at each start position and records the state
/// and forward-dynamics acceleration at the end of the hold.
///
/// Cells run in parallel; cell `i` draws its sensor noise from seed
/// `plan.seed + i` and rows come out in grid order (torque-major).
pub fn generate_open_loop(plan: &OpenLoopPlan, truth: &dyn ManipulatorModel, estimate: &dyn ManipulatorModel) -> Result<GeneratedData> {
    let n = truth.dof();
    plan.validate(n)?;
    let steps = (plan.hold / plan.dt).round().max(1.0) as usize;
    let cells: Vec<(usize, &DVector<f64>, &DVector<f64>)> = plan
        .torques
        .iter()
        .flat_map(|tau| plan.positions.iter().map(move |q0| (tau, q0)))
        .enumerate()
        .map(|(i, (tau, q0))| (i, tau, q0))
        .collect();

    let samples = cells
        .into_par_iter()
        .map(|(i, tau, q0)| -> Result<Option<Sample>> {
            let mut state = JointState::at_rest(q0.clone());
            for _ in 0..steps {
                let k1v = match forward_dynamics(truth, &state, tau) {
                    Ok(a) => a,
                    Err(_) => return Ok(None),
                };
                state = match rk4_step(&state, k1v, plan.dt, |_, s| forward_dynamics(truth, s, tau)) {
                    Ok(s) => s,
                    Err(_) => return Ok(None),
                };
                if diverged(&state) {
                    return Ok(None);
                }
            }
            let Ok(qdd) = forward_dynamics(truth, &state, tau) else {
                return Ok(None);
            };
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(i as u64));
            plan.noise.corrupt(&mut state, &mut rng)?;
            Ok(Some(Sample {
                input: stack_input(&qdd, &state),
                output: residual(estimate, &state, &qdd, tau).iter().copied().collect(),
                applied: tau.clone(),
            }))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut provenance = String::new();
    let _ = writeln!(provenance, "mode = open-loop-torque");
    let _ = writeln!(provenance, "torque_count = {}", plan.torques.len());
    let _ = writeln!(provenance, "position_count = {}", plan.positions.len());
    let _ = writeln!(provenance, "hold = {:?}", plan.hold);
    let _ = writeln!(provenance, "dt = {:?}", plan.dt);
    let _ = writeln!(provenance, "noise_q_std = {:?}", plan.noise.q_std);
    let _ = writeln!(provenance, "noise_qd_std = {:?}", plan.noise.qd_std);
    let _ = writeln!(provenance, "seed = {}", plan.seed);
    assemble(samples, 3 * n, n, provenance)
}

/// Runs the controller on the true plant (RK4) and samples every
/// `sample_period`, starting one period in. The recorded acceleration is the
/// forward dynamics under the torque applied at that instant; noise is added
/// to the recorded state before the residual is formed.
pub fn generate_closed_loop(plan: &ClosedLoopPlan, truth: &dyn ManipulatorModel, estimate: &dyn ManipulatorModel) -> Result<GeneratedData> {
    let n = truth.dof();
    let stride = plan.steps_per_sample()?;
    if plan.controller.is_stochastic() {
        return Err(Error::Config("closed-loop excitation needs a deterministic controller".into()));
    }
    let initial = plan.initial.clone().unwrap_or_else(|| {
        let r = plan.reference.sample(0.0);
        JointState::new(r.q, r.qd)
    });
    let config = SimConfig {
        dt: plan.dt,
        duration: stride as f64 * plan.dt * plan.sample_count as f64,
        integrator: Integrator::Rk4,
        ..SimConfig::default()
    };
    let run = simulate(truth, &plan.controller, &plan.reference, &config, &initial, plan.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut samples = Vec::with_capacity(plan.sample_count);
    for s in 1..=plan.sample_count {
        let k = s * stride;
        if k >= run.len() {
            samples.push(None);
            continue;
        }
        let mut state = run.state(k);
        let applied = DVector::from_column_slice(run.row(&run.tau, k));
        let qdd = forward_dynamics(truth, &state, &applied)?;
        plan.noise.corrupt(&mut state, &mut rng)?;
        samples.push(Some(Sample {
            input: stack_input(&qdd, &state),
            output: residual(estimate, &state, &qdd, &applied).iter().copied().collect(),
            applied,
        }));
    }

    let mut provenance = String::new();
    let _ = writeln!(provenance, "mode = closed-loop-tracking");
    let _ = writeln!(provenance, "sample_period = {:?}", plan.sample_period);
    let _ = writeln!(provenance, "sample_count = {}", plan.sample_count);
    let _ = writeln!(provenance, "dt = {:?}", plan.dt);
    let _ = writeln!(provenance, "noise_q_std = {:?}", plan.noise.q_std);
    let _ = writeln!(provenance, "noise_qd_std = {:?}", plan.noise.qd_std);
    let _ = writeln!(provenance, "seed = {}", plan.seed);
    assemble(samples, 3 * n, n, provenance)
}

pub fn generate(plan: &ExcitationPlan, truth: &dyn ManipulatorModel, estimate: &dyn ManipulatorModel) -> Result<GeneratedData> {
    match plan {
        ExcitationPlan::OpenLoop(p) => generate_open_loop(p, truth, estimate),
        ExcitationPlan::ClosedLoop(p) => generate_closed_loop(p, truth, estimate),
    }
}

/// Deterministic stratified subsample: the rows are cut into `size` equal
/// strata in their stored order and one row is drawn from each.
pub fn stratified_subsample(set: &TrainingSet, size: usize, seed: u64) -> Result<TrainingSet> {
    let m = set.len();
    if size > m {
        return Err(Error::Precondition(format!("asked for {size} training points but only {m} are available")));
    }
    if size == m {
        return Ok(set.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = (0..size)
        .map(|s| {
            let lo = s * m / size;
            let hi = ((s + 1) * m / size).max(lo + 1);
            rand::Rng::random_range(&mut rng, lo..hi)
        })
        .collect();
    Ok(set.subset(&indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Gains;
    use crate::dynamics::{aero_torque, TwoLinkArm, WingModel, STANDARD_GRAVITY};
    use std::sync::Arc;

    fn small_plan() -> OpenLoopPlan {
        let pi = std::f64::consts::PI;
        OpenLoopPlan::grid_1d((-8.0, 8.0), 5, (-pi, pi), 4)
    }

    #[test]
    fn perfect_estimate_gives_zero_residuals() {
        let wing = WingModel::standard();
        let data = generate_open_loop(&small_plan(), &wing, &wing).unwrap();
        assert_eq!(data.set.len(), 20);
        assert!(data.set.outputs().amax() < 1e-12);
    }

    #[test]
    fn equilibrium_cell_stays_at_rest() {
        let wing = WingModel::standard().without_air();
        let est = wing.pendulum_estimate(0.9, 0.9);
        let plan = OpenLoopPlan::grid_1d((0.0, 0.0), 1, (0.0, 0.0), 1);
        let data = generate_open_loop(&plan, &wing, &est).unwrap();
        assert_eq!(data.set.input(0), &[0.0, 0.0, 0.0]);
        assert_eq!(data.set.outputs()[(0, 0)], 0.0);
    }

    #[test]
    fn wing_residual_matches_closed_form() {
        let wing = WingModel::standard();
        let est = wing.pendulum_estimate(0.9, 0.9);
        let data = generate_open_loop(&small_plan(), &wing, &est).unwrap();
        let aero = wing.aero.as_ref().unwrap();
        for i in 0..data.set.len() {
            let x = data.set.input(i);
            let (qdd, qd, q) = (x[0], x[1], x[2]);
            let expected = 0.1 * qdd + 0.1 * STANDARD_GRAVITY * q.sin() + aero_torque(&aero.table, q, aero.airspeed, &aero.geometry).unwrap();
            let _ = qd;
            assert!((data.set.outputs()[(i, 0)] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn residual_identity_and_determinism() {
        let wing = WingModel::standard();
        let est = wing.pendulum_estimate(0.9, 0.9);
        let mut plan = small_plan();
        plan.noise = SensorNoise { q_std: 1e-3, qd_std: 1e-2 };
        plan.seed = 11;
        let a = generate_open_loop(&plan, &wing, &est).unwrap();
        let b = generate_open_loop(&plan, &wing, &est).unwrap();
        assert_eq!(a.set.to_csv(&[]), b.set.to_csv(&[]));
        for i in 0..a.set.len() {
            let x = a.set.input(i);
            let state = JointState::new(DVector::from_element(1, x[2]), DVector::from_element(1, x[1]));
            let tau_hat = est.inverse_dynamics(&state, &DVector::from_element(1, x[0]));
            assert!((a.set.outputs()[(i, 0)] + tau_hat[0] - a.applied[i][0]).abs() < 1e-8);
        }
    }

    fn arm_plan() -> (ClosedLoopPlan, TwoLinkArm, TwoLinkArm) {
        let truth = TwoLinkArm::surrogate_true();
        let est = TwoLinkArm::rigid();
        let reference = SinusoidReference::new(vec![0.6; 2], vec![1.0, 2.0], vec![0.0; 2], false).unwrap();
        let ctrl = Controller::Pd {
            gains: Gains::diagonal(&[800.0, 600.0], &[5.0, 5.0]).unwrap(),
        };
        let mut plan = ClosedLoopPlan::new(ctrl, reference);
        plan.sample_count = 40;
        plan.duration = 1.2;
        (plan, truth, est)
    }

    #[test]
    fn closed_loop_residual_is_friction_plus_spring() {
        let (mut plan, truth, est) = arm_plan();
        plan.noise = SensorNoise::default();
        let data = generate_closed_loop(&plan, &truth, &est).unwrap();
        assert_eq!(data.set.len(), 40);
        for i in 0..data.set.len() {
            let x = data.set.input(i);
            let q = DVector::from_column_slice(&x[4..6]);
            let qd = DVector::from_column_slice(&x[2..4]);
            let expected = truth.friction_torque(&qd) - truth.spring_torque(&q);
            let got = data.set.outputs().row(i).transpose();
            assert!((got - expected).amax() < 1e-9);
        }
    }

    #[test]
    fn closed_loop_perfect_estimate_and_precondition() {
        let (mut plan, truth, _) = arm_plan();
        plan.noise = SensorNoise::default();
        let data = generate_closed_loop(&plan, &truth, &truth).unwrap();
        assert!(data.set.outputs().amax() < 1e-10);
        plan.sample_count = 41;
        assert!(matches!(generate_closed_loop(&plan, &truth, &truth), Err(Error::Precondition(_))));
    }

    #[test]
    fn closed_loop_noise_is_seeded() {
        let (plan, truth, est) = arm_plan();
        let a = generate_closed_loop(&plan, &truth, &est).unwrap();
        let b = generate_closed_loop(&plan, &truth, &est).unwrap();
        assert_eq!(a, b);
        let other = ClosedLoopPlan { seed: 1, ..plan };
        assert_ne!(generate_closed_loop(&other, &truth, &est).unwrap().set, a.set);
    }

    #[test]
    fn true_residual_matches_generated() {
        let wing = Arc::new(WingModel::standard());
        let est = wing.pendulum_estimate(0.9, 0.9);
        let data = generate_open_loop(&small_plan(), wing.as_ref(), &est).unwrap();
        for i in 0..data.set.len() {
            let r = true_residual(wing.as_ref(), &est, data.set.input(i));
            assert!((r[0] - data.set.outputs()[(i, 0)]).abs() < 1e-10);
        }
    }

    #[test]
    fn stratified_subsample_is_deterministic_and_spread() {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..100).map(|i| (vec![i as f64], vec![0.0])).collect();
        let set = TrainingSet::from_pairs(1, 1, &pairs).unwrap();
        let a = stratified_subsample(&set, 10, 3).unwrap();
        assert_eq!(a, stratified_subsample(&set, 10, 3).unwrap());
        for s in 0..10 {
            let v = a.input(s)[0];
            assert!(v >= 10.0 * s as f64 && v < 10.0 * (s + 1) as f64);
        }
        assert!(stratified_subsample(&set, 101, 0).is_err());
        assert_eq!(stratified_subsample(&set, 0, 0).unwrap().len(), 0);
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(-8.0, 8.0, 33);
        assert_eq!(v.len(), 33);
        assert_eq!(v[0], -8.0);
        assert_eq!(v[32], 8.0);
        assert_eq!(v[16], 0.0);
    }
}
