//! Scenario files. Every table rejects unknown keys: a misspelt gain must be
//! an error, not a silent default.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{Gains, GpMode};
use crate::dynamics::{AeroGeometry, AeroTable, Friction, JointState, ManipulatorModel, Spring, TwoLinkArm, WingAero, WingModel};
use crate::error::{Error, Result};
use crate::gp::OptimizerOptions;
use crate::sim::{Integrator, SimConfig, SinusoidReference};
use crate::training::{linspace, ClosedLoopPlan, ExcitationPlan, OpenLoopPlan, SensorNoise};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub plant: PlantSpec,
    #[serde(default)]
    pub estimate: EstimateSpec,
    pub controller: ControllerSpec,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub sim: SimSpec,
    #[serde(default)]
    pub learning_curve: LearningCurveSpec,
    #[serde(default)]
    pub check: CheckSpec,
    #[serde(default)]
    pub output: OutputSpec,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlantSpec {
    Wing(WingSpec),
    TwoLinkArm(ArmSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WingSpec {
    pub inertia: f64,
    pub mass: f64,
    pub lever: f64,
    pub gravity: f64,
    /// Turn the aerodynamic load off entirely.
    pub aero: bool,
    pub airspeed: f64,
    pub apparent_wind: bool,
    pub density: f64,
    pub chord: f64,
    pub span: f64,
    pub pressure_lever: f64,
    /// `alpha_deg,cl,cd` table; the synthetic polar when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aero_table: Option<PathBuf>,
}

impl Default for WingSpec {
    fn default() -> Self {
        let wing = WingModel::standard();
        let aero = WingAero::default_synthetic();
        Self {
            inertia: wing.inertia,
            mass: wing.mass,
            lever: wing.lever,
            gravity: wing.gravity,
            aero: true,
            airspeed: aero.airspeed,
            apparent_wind: aero.apparent_wind,
            density: aero.geometry.density,
            chord: aero.geometry.chord,
            span: aero.geometry.span,
            pressure_lever: aero.geometry.pressure_lever,
            aero_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmSpec {
    pub lengths: [f64; 2],
    pub masses: [f64; 2],
    pub gravity: f64,
    pub friction: bool,
    pub viscous: [f64; 2],
    pub coulomb: [f64; 2],
    pub smoothing: f64,
    pub spring: bool,
    pub anchor: [f64; 2],
    pub rest_length: f64,
    pub k1: f64,
    pub k3: f64,
}

impl Default for ArmSpec {
    fn default() -> Self {
        let arm = TwoLinkArm::rigid();
        let f = TwoLinkArm::default_friction();
        let s = TwoLinkArm::default_spring();
        Self {
            lengths: arm.lengths,
            masses: arm.masses,
            gravity: arm.gravity,
            friction: true,
            viscous: f.viscous,
            coulomb: f.coulomb,
            smoothing: f.smoothing,
            spring: true,
            anchor: s.anchor,
            rest_length: s.rest_length,
            k1: s.k1,
            k3: s.k3,
        }
    }
}

impl ArmSpec {
    fn rigid_arm(&self, mass_factor: f64) -> TwoLinkArm {
        let masses = [self.masses[0] * mass_factor, self.masses[1] * mass_factor];
        let l = self.lengths;
        TwoLinkArm {
            lengths: l,
            masses,
            inertias: [masses[0] * l[0] * l[0] / 12.0, masses[1] * l[1] * l[1] / 12.0],
            com: [l[0] / 2.0, l[1] / 2.0],
            gravity: self.gravity,
            friction: None,
            spring: None,
        }
    }

    fn spring_model(&self) -> Spring {
        Spring {
            anchor: self.anchor,
            rest_length: self.rest_length,
            k1: self.k1,
            k3: self.k3,
        }
    }
}

/// Wing: `Ĵ = inertia_factor·J`, `l̂m̂ = mass_lever_factor·ml` (both 0.9 by
/// default). Arm: the rigid arm without friction or band, masses scaled by
/// `mass_factor` (1 by default).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inertia_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_lever_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_factor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    HgPd,
    LgPd,
    Ct,
    CtSp,
    CtGp,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::HgPd => "hg-pd",
            ControllerKind::LgPd => "lg-pd",
            ControllerKind::Ct => "ct",
            ControllerKind::CtSp => "ct-sp",
            ControllerKind::CtGp => "ct-gp",
        }
    }

    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::HgPd,
        ControllerKind::LgPd,
        ControllerKind::Ct,
        ControllerKind::CtSp,
        ControllerKind::CtGp,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    #[default]
    Deterministic,
    Stochastic,
}

impl From<ModeSpec> for GpMode {
    fn from(m: ModeSpec) -> Self {
        match m {
            ModeSpec::Deterministic => GpMode::Deterministic,
            ModeSpec::Stochastic => GpMode::Stochastic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    /// Diagonal gains; plant- and controller-specific defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kp: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kd: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: ModeSpec,
    /// Trained artifacts for `ct-gp`; default to the files `train` writes
    /// into the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparameters: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub amplitude: Vec<f64>,
    pub frequency: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Vec<f64>>,
    /// Read `frequency` as Hz. When false it is an angular frequency in rad/s.
    #[serde(default = "default_true")]
    pub frequency_in_hz: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    OpenLoop,
    ClosedLoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSpec {
    /// Open loop for the wing, closed loop for the arm when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<TrainingMode>,
    /// Use this training set instead of generating one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub seed: u64,
    pub torque_range: [f64; 2],
    pub torque_count: usize,
    pub position_range: [f64; 2],
    pub position_count: usize,
    pub hold: f64,
    pub dt: f64,
    pub sample_period: f64,
    pub sample_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    /// PD gains of the excitation controller in closed-loop mode.
    pub excitation_kp: Vec<f64>,
    pub excitation_kd: Vec<f64>,
    /// Sensor noise; zero in open-loop and 1e-3 / 1e-2 in closed-loop mode
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_q_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_qd_std: Option<f64>,
    pub optimizer: OptimizerSpec,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            mode: None,
            data: None,
            seed: 0,
            torque_range: [-8.0, 8.0],
            torque_count: 33,
            position_range: [-PI, PI],
            position_count: 30,
            hold: 0.5,
            dt: 1e-3,
            sample_period: 0.03,
            sample_count: 351,
            duration: None,
            excitation_kp: vec![800.0, 600.0],
            excitation_kd: vec![5.0, 5.0],
            noise_q_std: None,
            noise_qd_std: None,
            optimizer: OptimizerSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub budget: usize,
    pub restarts: usize,
    /// Hyperparameters are optimised on a stratified subsample of at most
    /// this many points; the final model uses every point.
    pub max_points: usize,
    pub initial_length_scale: f64,
    /// Initial noise std as a fraction of the output RMS.
    pub initial_noise_ratio: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        let o = OptimizerOptions::default();
        Self {
            budget: o.budget,
            restarts: o.restarts,
            max_points: 300,
            initial_length_scale: 1.0,
            initial_noise_ratio: 0.01,
        }
    }
}

impl OptimizerSpec {
    pub fn options(&self) -> OptimizerOptions {
        OptimizerOptions {
            budget: self.budget,
            restarts: self.restarts,
            ..OptimizerOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorSpec {
    Rk4,
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSpec {
    pub dt: f64,
    pub duration: f64,
    /// Euler–Maruyama for the stochastic law, RK4 otherwise, when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorSpec>,
    pub realizations: usize,
    pub base_seed: u64,
    pub lyapunov_epsilon: f64,
    pub record_lyapunov: bool,
    /// Start of the RMSE window, s.
    pub rmse_from: f64,
    /// Start at rest at the origin when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_q: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_qd: Option<Vec<f64>>,
}

impl Default for SimSpec {
    fn default() -> Self {
        let c = SimConfig::default();
        Self {
            dt: c.dt,
            duration: c.duration,
            integrator: None,
            realizations: c.realizations,
            base_seed: c.base_seed,
            lyapunov_epsilon: c.lyapunov_epsilon,
            record_lyapunov: false,
            rmse_from: c.rmse_from,
            initial_q: None,
            initial_qd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningCurveSpec {
    pub sizes: Vec<usize>,
    pub subsample_seed: u64,
    /// Held-out probe grid for the consistency check (open-loop mode).
    pub probe_torque_count: usize,
    pub probe_position_count: usize,
}

impl Default for LearningCurveSpec {
    fn default() -> Self {
        Self {
            sizes: vec![0, 50, 200, 500, 990],
            subsample_seed: 0,
            probe_torque_count: 25,
            probe_position_count: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSpec {
    pub samples: usize,
    pub probes: usize,
    /// Largest joint speed probed by the error-bound fit, rad/s.
    pub max_speed: f64,
    pub seed: u64,
    /// Negative control: flip the sign of the true plant's Coriolis matrix.
    pub negate_coriolis: bool,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            samples: 1000,
            probes: 2000,
            max_speed: 5.0,
            seed: 0,
            negate_coriolis: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub realizations: Option<usize>,
    pub controller: Option<ControllerKind>,
}

impl Scenario {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.base_dir = base_dir.into();
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.sim.base_seed = seed;
            self.training.seed = seed;
        }
        if let Some(r) = o.realizations {
            self.sim.realizations = r;
        }
        if let Some(kind) = o.controller {
            if kind != self.controller.kind {
                // file gains belong to the file's controller
                self.controller.kp = None;
                self.controller.kd = None;
                self.controller.kind = kind;
            }
            if kind != ControllerKind::CtGp {
                self.controller.mode = ModeSpec::Deterministic;
            }
        }
        self.validate()
    }

    pub fn dof(&self) -> usize {
        match self.plant {
            PlantSpec::Wing(_) => 1,
            PlantSpec::TwoLinkArm(_) => 2,
        }
    }

    /// Schema checks that do not need the file system.
    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        let per_joint = |name: &str, v: &[f64]| {
            if v.len() == n {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} needs {n} entries, got {}", v.len())))
            }
        };
        per_joint("reference.amplitude", &self.reference.amplitude)?;
        per_joint("reference.frequency", &self.reference.frequency)?;
        if let Some(p) = &self.reference.phase {
            per_joint("reference.phase", p)?;
        }
        if let Some(q) = &self.sim.initial_q {
            per_joint("sim.initial_q", q)?;
        }
        if let Some(q) = &self.sim.initial_qd {
            per_joint("sim.initial_qd", q)?;
        }
        self.gains()?;
        let e = &self.estimate;
        match self.plant {
            PlantSpec::Wing(_) => {
                if e.mass_factor.is_some() {
                    return Err(Error::Config("estimate.mass_factor applies to the two-link arm only".into()));
                }
                if self.controller.kind == ControllerKind::CtSp {
                    return Err(Error::Config("ct-sp needs a spring, which only the two-link arm has".into()));
                }
            }
            PlantSpec::TwoLinkArm(_) => {
                if e.inertia_factor.is_some() || e.mass_lever_factor.is_some() {
                    return Err(Error::Config("estimate.inertia_factor and mass_lever_factor apply to the wing only".into()));
                }
            }
        }
        if self.controller.mode == ModeSpec::Stochastic && self.controller.kind != ControllerKind::CtGp {
            return Err(Error::Config("stochastic mode is only defined for ct-gp".into()));
        }
        if !(self.sim.dt > 0.0) || !(self.sim.duration >= self.sim.dt) || self.sim.realizations == 0 {
            return Err(Error::Config("sim needs dt > 0, duration >= dt and at least one realization".into()));
        }
        if self.learning_curve.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("learning_curve.sizes must be strictly ascending".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn truth(&self) -> Result<Arc<dyn ManipulatorModel>> {
        let model: Arc<dyn ManipulatorModel> = match &self.plant {
            PlantSpec::Wing(w) => {
                let aero = if w.aero {
                    let table = match &w.aero_table {
                        Some(p) => AeroTable::read_csv(&self.resolve(p))?,
                        None => WingAero::default_synthetic().table,
                    };
                    Some(WingAero {
                        table,
                        geometry: AeroGeometry {
                            density: w.density,
                            chord: w.chord,
                            span: w.span,
                            pressure_lever: w.pressure_lever,
                        },
                        airspeed: w.airspeed,
                        apparent_wind: w.apparent_wind,
                    })
                } else {
                    None
                };
                Arc::new(WingModel {
                    inertia: w.inertia,
                    mass: w.mass,
                    lever: w.lever,
                    gravity: w.gravity,
                    aero,
                })
            }
            PlantSpec::TwoLinkArm(a) => Arc::new(TwoLinkArm {
                friction: a.friction.then_some(Friction {
                    viscous: a.viscous,
                    coulomb: a.coulomb,
                    smoothing: a.smoothing,
                }),
                spring: a.spring.then(|| a.spring_model()),
                ..a.rigid_arm(1.0)
            }),
        };
        Ok(model)
    }

    pub fn estimate(&self) -> Arc<dyn ManipulatorModel> {
        let e = &self.estimate;
        match &self.plant {
            PlantSpec::Wing(w) => {
                let wing = WingModel {
                    inertia: w.inertia,
                    mass: w.mass,
                    lever: w.lever,
                    gravity: w.gravity,
                    aero: None,
                };
                Arc::new(wing.pendulum_estimate(e.inertia_factor.unwrap_or(0.9), e.mass_lever_factor.unwrap_or(0.9)))
            }
            PlantSpec::TwoLinkArm(a) => Arc::new(a.rigid_arm(e.mass_factor.unwrap_or(1.0))),
        }
    }

    /// The estimate plus a linear band with the plant's tangent stiffness.
    pub fn spring_estimate(&self) -> Result<Arc<dyn ManipulatorModel>> {
        match &self.plant {
            PlantSpec::TwoLinkArm(a) => {
                let mut arm = a.rigid_arm(self.estimate.mass_factor.unwrap_or(1.0));
                arm.spring = Some(a.spring_model().linearized());
                Ok(Arc::new(arm))
            }
            PlantSpec::Wing(_) => Err(Error::Config("ct-sp needs a spring, which only the two-link arm has".into())),
        }
    }

    pub fn default_gains(&self, kind: ControllerKind) -> (Vec<f64>, Vec<f64>) {
        match (&self.plant, kind) {
            (PlantSpec::Wing(_), _) => (vec![5.0], vec![5.0]),
            (PlantSpec::TwoLinkArm(_), ControllerKind::HgPd) => (vec![800.0, 600.0], vec![5.0, 5.0]),
            (PlantSpec::TwoLinkArm(_), _) => (vec![20.0, 15.0], vec![5.0, 5.0]),
        }
    }

    pub fn gains(&self) -> Result<Gains> {
        let (kp, kd) = self.default_gains(self.controller.kind);
        let kp = self.controller.kp.clone().unwrap_or(kp);
        let kd = self.controller.kd.clone().unwrap_or(kd);
        if kp.len() != self.dof() || kd.len() != self.dof() {
            return Err(Error::Config(format!("controller gains need {} entries", self.dof())));
        }
        Gains::diagonal(&kp, &kd).map_err(|e| Error::Config(format!("controller gains: {e}")))
    }

    pub fn reference(&self) -> Result<SinusoidReference> {
        let r = &self.reference;
        SinusoidReference::new(
            r.amplitude.clone(),
            r.frequency.clone(),
            r.phase.clone().unwrap_or_else(|| vec![0.0; self.dof()]),
            r.frequency_in_hz,
        )
    }

    pub fn initial_state(&self) -> JointState {
        let n = self.dof();
        let v = |o: &Option<Vec<f64>>| o.as_ref().map(|v| DVector::from_column_slice(v)).unwrap_or_else(|| DVector::zeros(n));
        JointState::new(v(&self.sim.initial_q), v(&self.sim.initial_qd))
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        let integrator = match s.integrator {
            Some(IntegratorSpec::Rk4) => Integrator::Rk4,
            Some(IntegratorSpec::EulerMaruyama) => Integrator::EulerMaruyama,
            None if self.controller.mode == ModeSpec::Stochastic => Integrator::EulerMaruyama,
            None => Integrator::Rk4,
        };
        SimConfig {
            dt: s.dt,
            duration: s.duration,
            integrator,
            realizations: s.realizations,
            base_seed: s.base_seed,
            lyapunov_epsilon: s.lyapunov_epsilon,
            rmse_from: s.rmse_from,
        }
    }

    pub fn training_mode(&self) -> TrainingMode {
        self.training.mode.unwrap_or(match self.plant {
            PlantSpec::Wing(_) => TrainingMode::OpenLoop,
            PlantSpec::TwoLinkArm(_) => TrainingMode::ClosedLoop,
        })
    }

    pub fn excitation_plan(&self) -> Result<ExcitationPlan> {
        let t = &self.training;
        let n = self.dof();
        let open = self.training_mode() == TrainingMode::OpenLoop;
        let noise = SensorNoise {
            q_std: t.noise_q_std.unwrap_or(if open { 0.0 } else { 1e-3 }),
            qd_std: t.noise_qd_std.unwrap_or(if open { 0.0 } else { 1e-2 }),
        };
        if !(noise.q_std >= 0.0 && noise.qd_std >= 0.0) {
            return Err(Error::Config("sensor noise std must be non-negative".into()));
        }
        if open {
            let fill = |v: f64| DVector::from_element(n, v);
            Ok(ExcitationPlan::OpenLoop(OpenLoopPlan {
                torques: linspace(t.torque_range[0], t.torque_range[1], t.torque_count).into_iter().map(fill).collect(),
                positions: linspace(t.position_range[0], t.position_range[1], t.position_count).into_iter().map(fill).collect(),
                hold: t.hold,
                dt: t.dt,
                noise,
                seed: t.seed,
            }))
        } else {
            if t.excitation_kp.len() != n || t.excitation_kd.len() != n {
                return Err(Error::Config(format!("training excitation gains need {n} entries")));
            }
            let gains = Gains::diagonal(&t.excitation_kp, &t.excitation_kd).map_err(|e| Error::Config(format!("excitation gains: {e}")))?;
            let mut plan = ClosedLoopPlan::new(crate::control::Controller::Pd { gains }, self.reference()?);
            plan.sample_period = t.sample_period;
            plan.sample_count = t.sample_count;
            plan.dt = t.dt;
            plan.duration = t.duration.unwrap_or(t.sample_period * t.sample_count as f64);
            plan.noise = noise;
            plan.seed = t.seed;
            Ok(ExcitationPlan::ClosedLoop(plan))
        }
    }

    /// SHA-256 of the scenario as re-serialised after overrides.
    /// Hash of the effective configuration. The output directory is left
    /// out so the same run written elsewhere produces identical files.
    pub fn config_hash(&self) -> String {
        let mut placed = self.clone();
        placed.output = OutputSpec::default();
        let canonical = toml::to_string(&placed).unwrap_or_default();
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Comment lines that head every output file.
    pub fn manifest(&self, label: &str) -> Vec<String> {
        vec![
            format!("gpct {}", env!("CARGO_PKG_VERSION")),
            format!("config_sha256 = {}", self.config_hash()),
            format!("base_seed = {}", self.sim.base_seed),
            format!("training_seed = {}", self.training.seed),
            format!("frequency_in_hz = {}", self.reference.frequency_in_hz),
            format!("controller = {label}"),
        ]
    }
}
