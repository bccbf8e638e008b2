//! Fixed-step closed-loop simulation: RK4 for deterministic laws,
//! Euler–Maruyama for the stochastic GP law, seeded ensembles and the
//! Lyapunov trace.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::control::{Controller, Gains, ReferenceBounds, ReferenceSample};
use crate::dynamics::{forward_dynamics, solve_mass, JointState, ManipulatorModel};
use crate::error::{Error, Result};

/// Any state component beyond this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// `q_d = A sin(ω t + φ)` per joint with analytic derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidReference {
    pub amplitude: Vec<f64>,
    pub frequency: Vec<f64>,
    pub phase: Vec<f64>,
    /// `frequency` is in Hz (`ω = 2πf`) rather than rad/s.
    pub frequency_in_hz: bool,
}

impl SinusoidReference {
    pub fn new(amplitude: Vec<f64>, frequency: Vec<f64>, phase: Vec<f64>, frequency_in_hz: bool) -> Result<Self> {
        let n = amplitude.len();
        if frequency.len() != n || phase.len() != n || n == 0 {
            return Err(Error::Config("reference amplitude, frequency and phase need one entry per joint".into()));
        }
        if amplitude.iter().chain(&frequency).chain(&phase).any(|v| !v.is_finite()) {
            return Err(Error::Config("reference parameters must be finite".into()));
        }
        Ok(Self {
            amplitude,
            frequency,
            phase,
            frequency_in_hz,
        })
    }

    pub fn dof(&self) -> usize {
        self.amplitude.len()
    }

    /// Angular frequency per joint, rad/s.
    pub fn omega(&self) -> Vec<f64> {
        let scale = if self.frequency_in_hz { 2.0 * PI } else { 1.0 };
        self.frequency.iter().map(|f| scale * f).collect()
    }

    pub fn sample(&self, t: f64) -> ReferenceSample {
        let n = self.dof();
        let omega = self.omega();
        let mut q = DVector::zeros(n);
        let mut qd = DVector::zeros(n);
        let mut qdd = DVector::zeros(n);
        for j in 0..n {
            let (s, c) = (omega[j] * t + self.phase[j]).sin_cos();
            let a = self.amplitude[j];
            q[j] = a * s;
            qd[j] = a * omega[j] * c;
            qdd[j] = -a * omega[j] * omega[j] * s;
        }
        ReferenceSample { q, qd, qdd }
    }

    /// `c_q = ‖A‖`, `c_q̇ = ‖A ω‖`, `c_q̈ = ‖A ω²‖`.
    pub fn bounds(&self) -> ReferenceBounds {
        let omega = self.omega();
        let norm = |p: i32| {
            self.amplitude
                .iter()
                .zip(&omega)
                .map(|(a, w)| (a * w.abs().powi(p)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        ReferenceBounds {
            c_q: norm(0),
            c_qd: norm(1),
            c_qdd: norm(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// s
    pub dt: f64,
    /// s
    pub duration: f64,
    pub integrator: Integrator,
    pub realizations: usize,
    pub base_seed: u64,
    pub lyapunov_epsilon: f64,
    /// Start of the RMSE window, s.
    pub rmse_from: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            duration: 9.5,
            integrator: Integrator::Rk4,
            realizations: 1,
            base_seed: 0,
            lyapunov_epsilon: 0.1,
            rmse_from: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.duration >= self.dt) {
            return Err(Error::Config(format!("need dt > 0 and duration >= dt (dt={}, duration={})", self.dt, self.duration)));
        }
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// One trajectory on the fixed time grid. Channels are stored row-major,
/// `n` values per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub dof: usize,
    pub seed: u64,
    pub time: Vec<f64>,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub e: Vec<f64>,
    pub ed: Vec<f64>,
    pub tau: Vec<f64>,
    pub gp_mean: Vec<f64>,
    pub gp_std: Vec<f64>,
    pub lyapunov: Option<Vec<f64>>,
    /// Time of divergence; the trace stops there.
    pub diverged_at: Option<f64>,
}

impl SimResult {
    fn with_capacity(dof: usize, steps: usize, seed: u64) -> Self {
        let cap = dof * steps;
        Self {
            dof,
            seed,
            time: Vec::with_capacity(steps),
            q: Vec::with_capacity(cap),
            qd: Vec::with_capacity(cap),
            e: Vec::with_capacity(cap),
            ed: Vec::with_capacity(cap),
            tau: Vec::with_capacity(cap),
            gp_mean: Vec::with_capacity(cap),
            gp_std: Vec::with_capacity(cap),
            lyapunov: None,
            diverged_at: None,
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn row<'a>(&self, channel: &'a [f64], k: usize) -> &'a [f64] {
        &channel[k * self.dof..(k + 1) * self.dof]
    }

    pub fn state(&self, k: usize) -> JointState {
        JointState::new(
            DVector::from_column_slice(self.row(&self.q, k)),
            DVector::from_column_slice(self.row(&self.qd, k)),
        )
    }

    /// `‖(e, ė)‖` at step `k`.
    pub fn error_norm(&self, k: usize) -> f64 {
        self.row(&self.e, k)
            .iter()
            .chain(self.row(&self.ed, k))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Largest `‖(e, ė)‖` over `t > after`.
    pub fn sup_error_after(&self, after: f64) -> f64 {
        (0..self.len())
            .filter(|&k| self.time[k] > after)
            .map(|k| self.error_norm(k))
            .fold(0.0, f64::max)
    }

    /// Per-joint root-mean-square position error over `t ≥ from`.
    pub fn rmse(&self, from: f64) -> Vec<f64> {
        rmse_of(&self.time, &self.e, self.dof, from)
    }

    fn push(&mut self, t: f64, state: &JointState, reference: &ReferenceSample, tau: &DVector<f64>, mean: &DVector<f64>, std: &DVector<f64>) {
        self.time.push(t);
        self.q.extend(state.q.iter());
        self.qd.extend(state.qd.iter());
        self.e.extend((&state.q - &reference.q).iter());
        self.ed.extend((&state.qd - &reference.qd).iter());
        self.tau.extend(tau.iter());
        self.gp_mean.extend(mean.iter());
        self.gp_std.extend(std.iter());
    }
}

impl SimResult {
    /// `t, q_i, qd_i, e_i, ed_i, tau_i, gp_mean_i, gp_std_i[, V]`, preceded by
    /// `# `-prefixed comment lines.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let n = self.dof;
        let mut out = String::new();
        for c in comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        let mut header = vec!["t".to_string()];
        for name in ["q", "qd", "e", "ed", "tau", "gp_mean", "gp_std"] {
            header.extend((1..=n).map(|j| format!("{name}_{j}")));
        }
        if self.lyapunov.is_some() {
            header.push("V".into());
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for k in 0..self.len() {
            let mut row = vec![format!("{:?}", self.time[k])];
            for channel in [&self.q, &self.qd, &self.e, &self.ed, &self.tau, &self.gp_mean, &self.gp_std] {
                row.extend(self.row(channel, k).iter().map(|v| format!("{v:?}")));
            }
            if let Some(v) = &self.lyapunov {
                row.push(format!("{:?}", v[k]));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

impl EnsembleStats {
    /// `t, mean_q_i, std_q_i, mean_qd_i, std_qd_i` per joint.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let n = self.dof;
        let mut out = String::new();
        for c in comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        let mut header = vec!["t".to_string()];
        for j in 1..=n {
            header.extend([format!("mean_q_{j}"), format!("std_q_{j}"), format!("mean_qd_{j}"), format!("std_qd_{j}")]);
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for (k, t) in self.time.iter().enumerate() {
            let mut row = vec![format!("{t:?}")];
            for j in 0..n {
                let i = k * n + j;
                row.extend([self.mean_q[i], self.std_q[i], self.mean_qd[i], self.std_qd[i]].iter().map(|v| format!("{v:?}")));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// RMSE per joint of a row-major error channel over `t ≥ from`.
///
/// Squares are taken after scaling by the largest magnitude, so a constant
/// error `c` gives exactly `|c|`.
pub fn rmse_of(time: &[f64], e: &[f64], dof: usize, from: f64) -> Vec<f64> {
    let window: Vec<usize> = (0..time.len()).filter(|&k| time[k] + 1e-12 >= from).collect();
    if window.is_empty() {
        return vec![f64::NAN; dof];
    }
    (0..dof)
        .map(|j| {
            let scale = window.iter().map(|&k| e[k * dof + j].abs()).fold(0.0, f64::max);
            if scale == 0.0 || !scale.is_finite() {
                return scale;
            }
            let mean = window.iter().map(|&k| (e[k * dof + j] / scale).powi(2)).sum::<f64>() / window.len() as f64;
            scale * mean.sqrt()
        })
        .collect()
}

fn out_of_bounds(state: &JointState) -> bool {
    state.q.iter().chain(state.qd.iter()).any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

fn acceleration(truth: &dyn ManipulatorModel, controller: &Controller, state: &JointState, reference: &ReferenceSample) -> Result<DVector<f64>> {
    let out = controller.evaluate(state, reference, None)?;
    forward_dynamics(truth, state, &out.drift)
}

/// One classical RK4 step on `[q; q̇]`. `k1v` is the acceleration at `state`;
/// `accel(offset, s)` gives it at the later stages, `offset` being the time
/// since the start of the step.
pub fn rk4_step<F>(state: &JointState, k1v: DVector<f64>, dt: f64, mut accel: F) -> Result<JointState>
where
    F: FnMut(f64, &JointState) -> Result<DVector<f64>>,
{
    let half = 0.5 * dt;
    let k1q = state.qd.clone();
    let s2 = JointState::new(&state.q + &k1q * half, &state.qd + &k1v * half);
    let k2v = accel(half, &s2)?;
    let k2q = s2.qd.clone();
    let s3 = JointState::new(&state.q + &k2q * half, &state.qd + &k2v * half);
    let k3v = accel(half, &s3)?;
    let k3q = s3.qd.clone();
    let s4 = JointState::new(&state.q + &k3q * dt, &state.qd + &k3v * dt);
    let k4v = accel(dt, &s4)?;
    let k4q = s4.qd;
    let sixth = dt / 6.0;
    Ok(JointState::new(
        &state.q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * sixth,
        &state.qd + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * sixth,
    ))
}

/// Integrates the closed loop from `initial` with run seed `seed`.
///
/// RK4 evaluates the controller at every stage. Euler–Maruyama holds the
/// controller over the step and adds `H⁻¹ Σ(q_c) √dt ξ` to the velocity only;
/// with zero diffusion it is exactly explicit Euler.
pub fn simulate(
    truth: &dyn ManipulatorModel,
    controller: &Controller,
    reference: &SinusoidReference,
    config: &SimConfig,
    initial: &JointState,
    seed: u64,
) -> Result<SimResult> {
    config.validate()?;
    if controller.is_stochastic() && config.integrator != Integrator::EulerMaruyama {
        return Err(Error::Config("a stochastic controller needs the euler-maruyama integrator".into()));
    }
    let n = truth.dof();
    if initial.q.len() != n || reference.dof() != n || controller.gains().dof() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: initial.q.len().min(reference.dof()).min(controller.gains().dof()),
            context: "plant, controller, reference and initial state dimensions",
        });
    }
    let steps = config.steps();
    let dt = config.dt;
    let sqrt_dt = dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = SimResult::with_capacity(n, steps + 1, seed);
    let mut state = initial.clone();

    for k in 0..=steps {
        let t = k as f64 * dt;
        let r = reference.sample(t);
        let out = controller.evaluate(&state, &r, None)?;
        result.push(t, &state, &r, &out.drift, &out.gp_mean, &out.gp_std);
        if k == steps {
            break;
        }
        let next = match config.integrator {
            Integrator::Rk4 => {
                let k1v = forward_dynamics(truth, &state, &out.drift)?;
                rk4_step(&state, k1v, dt, |offset, s| {
                    let r = reference.sample(t + offset);
                    acceleration(truth, controller, s, &r)
                })?
            }
            Integrator::EulerMaruyama => {
                let qdd = forward_dynamics(truth, &state, &out.drift)?;
                let q = &state.q + &state.qd * dt;
                let mut qd = &state.qd + qdd * dt;
                if controller.is_stochastic() && out.diffusion.iter().any(|&s| s != 0.0) {
                    let xi = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                    let kick: DVector<f64> = out.diffusion.component_mul(&xi) * sqrt_dt;
                    qd += solve_mass(truth, &state.q, kick)?;
                }
                JointState::new(q, qd)
            }
        };
        if out_of_bounds(&next) {
            result.diverged_at = Some(t + dt);
            break;
        }
        state = next;
    }
    Ok(result)
}

/// Per-step ensemble statistics over the non-divergent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub dof: usize,
    pub time: Vec<f64>,
    pub mean_q: Vec<f64>,
    pub std_q: Vec<f64>,
    pub mean_qd: Vec<f64>,
    pub std_qd: Vec<f64>,
    /// Per-run, per-joint RMSE (all runs, divergent ones included as NaN).
    pub rmse: Vec<Vec<f64>>,
    pub realizations: usize,
    pub diverged: usize,
    /// Standard deviations need at least two runs; with one they are zero and
    /// this is false.
    pub std_defined: bool,
}

impl EnsembleStats {
    /// Time average of the `2σ` band width of joint `j`, i.e. `mean(4σ_q)`.
    pub fn mean_band_width(&self, j: usize) -> f64 {
        let steps = self.time.len();
        (0..steps).map(|k| 4.0 * self.std_q[k * self.dof + j]).sum::<f64>() / steps as f64
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub stats: EnsembleStats,
    pub runs: Vec<SimResult>,
}

/// Runs `config.realizations` simulations with seeds `base_seed + i`.
/// Results are gathered by run index, so the schedule does not matter.
pub fn run_ensemble(
    truth: &dyn ManipulatorModel,
    controller: &Controller,
    reference: &SinusoidReference,
    config: &SimConfig,
    initial: &JointState,
) -> Result<Ensemble> {
    config.validate()?;
    let runs: Vec<SimResult> = (0..config.realizations)
        .into_par_iter()
        .map(|i| simulate(truth, controller, reference, config, initial, config.base_seed + i as u64))
        .collect::<Result<_>>()?;
    let stats = ensemble_stats(&runs, config.rmse_from)?;
    Ok(Ensemble { stats, runs })
}

pub fn ensemble_stats(runs: &[SimResult], rmse_from: f64) -> Result<EnsembleStats> {
    let first = runs.first().ok_or_else(|| Error::Precondition("ensemble needs at least one run".into()))?;
    let dof = first.dof;
    let good: Vec<&SimResult> = runs.iter().filter(|r| !r.diverged()).collect();
    let steps = good.first().map(|r| r.len()).unwrap_or(0);
    let time = good.first().map(|r| r.time.clone()).unwrap_or_default();
    let mut mean_q = vec![0.0; steps * dof];
    let mut mean_qd = vec![0.0; steps * dof];
    let mut std_q = vec![0.0; steps * dof];
    let mut std_qd = vec![0.0; steps * dof];
    let count = good.len() as f64;
    for r in &good {
        for (m, v) in mean_q.iter_mut().zip(&r.q) {
            *m += v / count;
        }
        for (m, v) in mean_qd.iter_mut().zip(&r.qd) {
            *m += v / count;
        }
    }
    let std_defined = good.len() >= 2;
    if std_defined {
        for r in &good {
            for i in 0..steps * dof {
                std_q[i] += (r.q[i] - mean_q[i]).powi(2);
                std_qd[i] += (r.qd[i] - mean_qd[i]).powi(2);
            }
        }
        let denom = count - 1.0;
        for v in std_q.iter_mut().chain(std_qd.iter_mut()) {
            *v = (*v / denom).sqrt();
        }
    }
    Ok(EnsembleStats {
        dof,
        time,
        mean_q,
        std_q,
        mean_qd,
        std_qd,
        rmse: runs
            .iter()
            .map(|r| if r.diverged() { vec![f64::NAN; dof] } else { r.rmse(rmse_from) })
            .collect(),
        realizations: runs.len(),
        diverged: runs.len() - good.len(),
        std_defined,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTrace {
    /// `V = ½ ėᵀHė + ½ eᵀK_p e + ε eᵀHė` per step.
    pub values: Vec<f64>,
    /// Steps where the quadratic form in `(e, ė)` was not positive definite.
    pub indefinite_steps: usize,
    /// Ultimate bound: sup of `‖(e, ė)‖` after the trajectory first enters
    /// the ball measured over the second half of the run.
    pub ball_radius: f64,
    pub entry_time: f64,
}

impl LyapunovTrace {
    pub fn indefinite_warning(&self) -> bool {
        self.indefinite_steps > 0
    }
}

pub fn lyapunov_trace(result: &SimResult, truth: &dyn ManipulatorModel, gains: &Gains, epsilon: f64) -> LyapunovTrace {
    let n = result.dof;
    let mut values = Vec::with_capacity(result.len());
    let mut indefinite = 0;
    for k in 0..result.len() {
        let q = DVector::from_column_slice(result.row(&result.q, k));
        let e = DVector::from_column_slice(result.row(&result.e, k));
        let ed = DVector::from_column_slice(result.row(&result.ed, k));
        let h = truth.mass_matrix(&q);
        let v = 0.5 * ed.dot(&(&h * &ed)) + 0.5 * e.dot(&(gains.kp() * &e)) + epsilon * e.dot(&(&h * &ed));
        values.push(v);
        let mut form = DMatrix::zeros(2 * n, 2 * n);
        form.view_mut((0, 0), (n, n)).copy_from(&(gains.kp() * 0.5));
        form.view_mut((n, n), (n, n)).copy_from(&(&h * 0.5));
        form.view_mut((0, n), (n, n)).copy_from(&(&h * (0.5 * epsilon)));
        form.view_mut((n, 0), (n, n)).copy_from(&(&h * (0.5 * epsilon)));
        if form.symmetric_eigenvalues().min() <= 0.0 {
            indefinite += 1;
        }
    }
    let len = result.len();
    let tail = (len / 2..len).map(|k| result.error_norm(k)).fold(0.0, f64::max);
    let entry = (0..len).find(|&k| result.error_norm(k) <= tail).unwrap_or(0);
    let ball_radius = (entry..len).map(|k| result.error_norm(k)).fold(0.0, f64::max);
    LyapunovTrace {
        values,
        indefinite_steps: indefinite,
        ball_radius,
        entry_time: result.time.get(entry).copied().unwrap_or(0.0),
    }
}
