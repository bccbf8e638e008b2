//! Scenario-driven pipelines behind the command-line tool: train, simulate,
//! evaluate, learning curve and condition checks. Every file they write
//! starts with `#` manifest lines and is byte-identical across reruns.

mod config;
mod metrics;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::control::{estimate_error_bound, verify_conditions, ConditionReport, Controller, GpMode, ModelErrorBound};
use crate::dynamics::{check_structural_properties, ManipulatorModel, NegatedCoriolis, StructuralReport};
use crate::error::{Error, Result};
use crate::gp::{
    optimize_hyperparameters, read_hyperparameters, write_hyperparameters, Hyperparameters, MultiGp, OptimizerReport, TrainingSet,
};
use crate::sim::{lyapunov_trace, run_ensemble, simulate as simulate_run, Ensemble, Integrator, SimConfig};
use crate::training::{generate, stratified_subsample, true_residual, ExcitationPlan, GeneratedData, OpenLoopPlan};

pub use config::{
    ArmSpec, CheckSpec, ControllerKind, ControllerSpec, EstimateSpec, IntegratorSpec, LearningCurveSpec, ModeSpec, OptimizerSpec, OutputSpec,
    Overrides, PlantSpec, ReferenceSpec, Scenario, SimSpec, TrainingMode, TrainingSpec, WingSpec,
};
pub use metrics::{read_trace, RmseReport, RmseRow, Trace, DEFAULT_T_SKIP};

pub const TRAINING_FILE: &str = "training.csv";
pub const PROVENANCE_FILE: &str = "training.provenance";
pub const HYPERPARAMETER_FILE: &str = "hyperparameters.txt";
pub const TRAIN_LOG_FILE: &str = "train.log";

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn with_comments(comments: &[String], body: &str) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(body);
    out
}

/// Label used in file names and manifests, e.g. `ct-gp-stochastic`.
pub fn controller_label(kind: ControllerKind, mode: ModeSpec) -> String {
    match (kind, mode) {
        (ControllerKind::CtGp, ModeSpec::Stochastic) => "ct-gp-stochastic".into(),
        (k, _) => k.name().into(),
    }
}

/// Initial guess: unit-ish length scale, signal std at the output RMS.
fn initial_hyperparameters(set: &TrainingSet, output: usize, spec: &OptimizerSpec) -> Result<Hyperparameters> {
    let y = set.output_column(output);
    let rms = if y.is_empty() {
        1.0
    } else {
        (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt().max(1e-6)
    };
    Hyperparameters::from_std(spec.initial_length_scale, rms, spec.initial_noise_ratio * rms)
}

/// Per-output marginal-likelihood optimisation on a stratified subsample of
/// at most `spec.max_points` rows.
pub fn fit_hyperparameters(set: &TrainingSet, spec: &OptimizerSpec, seed: u64) -> Result<Vec<OptimizerReport>> {
    let sub = if set.len() > spec.max_points {
        stratified_subsample(set, spec.max_points, seed)?
    } else {
        set.clone()
    };
    let options = spec.options();
    (0..set.output_dim())
        .map(|j| optimize_hyperparameters(&sub, j, &initial_hyperparameters(set, j, spec)?, &options))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub data: GeneratedData,
    pub reports: Vec<OptimizerReport>,
    pub files: Vec<PathBuf>,
}

impl TrainReport {
    pub fn hyperparameters(&self) -> Vec<Hyperparameters> {
        self.reports.iter().map(|r| r.hyperparameters).collect()
    }
}

/// Training data for the scenario: the configured file, or freshly
/// generated from the excitation plan.
pub fn training_data(scenario: &Scenario) -> Result<GeneratedData> {
    if let Some(path) = &scenario.training.data {
        let path = scenario.resolve(path);
        let set = TrainingSet::read_csv(&path)?;
        return Ok(GeneratedData {
            provenance: format!("mode = file\nsource = {}\nsamples = {}\ndropped = 0\n", path.display(), set.len()),
            set,
            applied: Vec::new(),
            dropped: 0,
        });
    }
    let truth = scenario.truth()?;
    let estimate = scenario.estimate();
    generate(&scenario.excitation_plan()?, truth.as_ref(), estimate.as_ref())
}

pub fn train(scenario: &Scenario) -> Result<TrainReport> {
    let data = training_data(scenario)?;
    if data.set.is_empty() {
        return Err(Error::Precondition("every excitation cell diverged; no training data".into()));
    }
    let reports = fit_hyperparameters(&data.set, &scenario.training.optimizer, scenario.training.seed)?;
    let out = scenario.output_dir();
    let manifest = scenario.manifest("train");
    let hyper: Vec<Hyperparameters> = reports.iter().map(|r| r.hyperparameters).collect();
    let files = vec![out.join(TRAINING_FILE), out.join(PROVENANCE_FILE), out.join(HYPERPARAMETER_FILE), out.join(TRAIN_LOG_FILE)];
    write(&files[0], &data.set.to_csv(&manifest))?;
    write(&files[1], &with_comments(&manifest, &data.provenance))?;
    write_hyperparameters(&files[2], &hyper, &manifest)?;
    let mut log = String::new();
    for (j, r) in reports.iter().enumerate() {
        let _ = writeln!(
            log,
            "output {}: log_likelihood = {:?} accepted_steps = {} failed_restarts = {}",
            j + 1,
            r.log_likelihood,
            r.trace.len().saturating_sub(1),
            r.failed_restarts
        );
    }
    write(&files[3], &with_comments(&manifest, &log))?;
    Ok(TrainReport { data, reports, files })
}

/// The trained GP of a `ct-gp` scenario, from the configured files or the
/// output directory.
pub fn load_gp(scenario: &Scenario) -> Result<MultiGp> {
    let out = scenario.output_dir();
    let data_path = scenario.controller.training_data.as_ref().map(|p| scenario.resolve(p)).unwrap_or_else(|| out.join(TRAINING_FILE));
    let hyper_path = scenario
        .controller
        .hyperparameters
        .as_ref()
        .map(|p| scenario.resolve(p))
        .unwrap_or_else(|| out.join(HYPERPARAMETER_FILE));
    let set = TrainingSet::read_csv(&data_path)?;
    let hyper = read_hyperparameters(&hyper_path)?;
    let n = scenario.dof();
    if set.input_dim() != 3 * n || set.output_dim() != n {
        return Err(Error::Config(format!(
            "{} has {} inputs and {} outputs; a {n}-joint plant needs {} and {n}",
            data_path.display(),
            set.input_dim(),
            set.output_dim(),
            3 * n
        )));
    }
    MultiGp::fit(&set, &hyper)
}

/// Builds the configured controller. `gp` is only used for `ct-gp`.
pub fn build_controller(scenario: &Scenario, kind: ControllerKind, gp: Option<Arc<MultiGp>>) -> Result<Controller> {
    let mut s = scenario.clone();
    s.controller.kind = kind;
    if kind != ControllerKind::CtGp {
        s.controller.mode = ModeSpec::Deterministic;
    }
    // explicit gains in the file belong to the configured controller only
    if kind != scenario.controller.kind {
        s.controller.kp = None;
        s.controller.kd = None;
    }
    let gains = s.gains()?;
    Ok(match kind {
        ControllerKind::HgPd | ControllerKind::LgPd => Controller::Pd { gains },
        ControllerKind::Ct => Controller::ComputedTorque {
            model: s.estimate(),
            gains,
        },
        ControllerKind::CtSp => Controller::ComputedTorque {
            model: s.spring_estimate()?,
            gains,
        },
        ControllerKind::CtGp => Controller::CtGp {
            model: s.estimate(),
            gp: match gp {
                Some(gp) => gp,
                None => Arc::new(load_gp(&s)?),
            },
            gains,
            mode: GpMode::from(s.controller.mode),
        },
    })
}

#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub label: String,
    pub ensemble: Ensemble,
    pub files: Vec<PathBuf>,
}

impl SimulateReport {
    /// Per-joint RMSE of the first run.
    pub fn rmse(&self) -> Vec<f64> {
        self.ensemble.stats.rmse[0].clone()
    }
}

/// Runs the configured controller (`realizations` times) and writes the first
/// trajectory, the ensemble band when there is more than one run, and a
/// run manifest.
pub fn simulate(scenario: &Scenario) -> Result<SimulateReport> {
    let truth = scenario.truth()?;
    let controller = build_controller(scenario, scenario.controller.kind, None)?;
    let config = scenario.sim_config();
    let label = controller_label(scenario.controller.kind, scenario.controller.mode);
    let mut ensemble = run_ensemble(truth.as_ref(), &controller, &scenario.reference()?, &config, &scenario.initial_state())?;
    if scenario.sim.record_lyapunov {
        for run in &mut ensemble.runs {
            run.lyapunov = Some(lyapunov_trace(run, truth.as_ref(), controller.gains(), config.lyapunov_epsilon).values);
        }
    }
    let out = scenario.output_dir();
    let manifest = scenario.manifest(&label);
    let mut files = vec![out.join(format!("{label}_trajectory.csv"))];
    write(&files[0], &ensemble.runs[0].to_csv(&manifest))?;
    if ensemble.runs.len() > 1 {
        let path = out.join(format!("{label}_ensemble.csv"));
        write(&path, &ensemble.stats.to_csv(&manifest))?;
        files.push(path);
    }
    let mut summary = String::new();
    let _ = writeln!(summary, "realizations = {}", ensemble.stats.realizations);
    let _ = writeln!(summary, "diverged = {}", ensemble.stats.diverged);
    let _ = writeln!(summary, "integrator = {}", if config.integrator == Integrator::Rk4 { "rk4" } else { "euler-maruyama" });
    let _ = writeln!(summary, "seeds = {}..{}", config.base_seed, config.base_seed + config.realizations as u64 - 1);
    let _ = writeln!(summary, "rmse_from = {:?}", config.rmse_from);
    for (i, run) in ensemble.runs.iter().enumerate() {
        let rmse: Vec<String> = ensemble.stats.rmse[i].iter().map(|v| format!("{v:?}")).collect();
        let status = match run.diverged_at {
            Some(t) => format!(" diverged_at = {t:?}"),
            None => String::new(),
        };
        let _ = writeln!(summary, "run {} seed {} rmse = [{}]{status}", i, run.seed, rmse.join(", "));
    }
    let _ = writeln!(summary, "[config]\n{}", toml::to_string(scenario).unwrap_or_default());
    let path = out.join(format!("{label}_manifest.txt"));
    write(&path, &with_comments(&manifest, &summary))?;
    files.push(path);
    if ensemble.stats.diverged == ensemble.stats.realizations {
        return Err(Error::Divergence {
            time: ensemble.runs[0].diverged_at.unwrap_or(f64::NAN),
        });
    }
    Ok(SimulateReport { label, ensemble, files })
}

/// RMSE of several trajectory files over `t ≥ t_skip`.
pub fn evaluate(paths: &[PathBuf], t_skip: f64) -> Result<RmseReport> {
    let traces = paths.iter().map(|p| read_trace(p)).collect::<Result<Vec<_>>>()?;
    RmseReport::from_traces(&traces, t_skip)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningPoint {
    pub size: usize,
    pub rmse: Vec<f64>,
    /// Median over the probe set of `‖μ(x) − τ̃_true(x)‖`.
    pub probe_median: f64,
    pub hyperparameters: Vec<Hyperparameters>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub baseline_rmse: Vec<f64>,
    pub points: Vec<LearningPoint>,
    pub probe_size: usize,
}

impl LearningCurve {
    pub fn to_csv(&self, comments: &[String]) -> String {
        let n = self.baseline_rmse.len();
        let mut body = String::from("m");
        for j in 1..=n {
            let _ = write!(body, ",rmse_{j}");
        }
        body.push_str(",probe_median\n");
        for p in &self.points {
            let _ = write!(body, "{}", p.size);
            for v in &p.rmse {
                let _ = write!(body, ",{v:?}");
            }
            let _ = writeln!(body, ",{:?}", p.probe_median);
        }
        with_comments(comments, &body)
    }
}

/// Held-out probe inputs with their exact residuals. Open-loop scenarios use
/// a grid offset from the training grid; closed-loop ones a noiseless run
/// with a shifted reference phase.
fn probe_set(scenario: &Scenario, truth: &dyn ManipulatorModel, estimate: &dyn ManipulatorModel) -> Result<TrainingSet> {
    let plan = match scenario.excitation_plan()? {
        ExcitationPlan::OpenLoop(p) => {
            let lc = &scenario.learning_curve;
            let t = &scenario.training;
            // keep clear of the training grid lines
            let inset = |range: [f64; 2], count: usize| {
                let h = 0.5 * (range[1] - range[0]) / count.max(1) as f64;
                (range[0] + h, range[1] - h)
            };
            let n = scenario.dof();
            let base = OpenLoopPlan::grid_1d(
                inset(t.torque_range, lc.probe_torque_count),
                lc.probe_torque_count,
                inset(t.position_range, lc.probe_position_count),
                lc.probe_position_count,
            );
            let fill = |v: &nalgebra::DVector<f64>| nalgebra::DVector::from_element(n, v[0]);
            ExcitationPlan::OpenLoop(OpenLoopPlan {
                torques: base.torques.iter().map(fill).collect(),
                positions: base.positions.iter().map(fill).collect(),
                noise: Default::default(),
                ..p
            })
        }
        ExcitationPlan::ClosedLoop(mut p) => {
            p.noise = Default::default();
            p.seed = p.seed.wrapping_add(1);
            p.reference.phase.iter_mut().for_each(|ph| *ph += 0.5);
            ExcitationPlan::ClosedLoop(p)
        }
    };
    Ok(generate(&plan, truth, estimate)?.set)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// For each size: stratified subsample, re-optimised hyperparameters,
/// deterministic CT-GP run and the consistency probe.
pub fn learning_curve(scenario: &Scenario, sizes: &[usize]) -> Result<LearningCurve> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("learning-curve sizes must be strictly ascending".into()));
    }
    let truth = scenario.truth()?;
    let estimate = scenario.estimate();
    let full = training_data(scenario)?.set;
    if let Some(&m) = sizes.iter().find(|&&m| m > full.len()) {
        return Err(Error::Precondition(format!("size {m} exceeds the {} available training points", full.len())));
    }
    let probes = probe_set(scenario, truth.as_ref(), estimate.as_ref())?;
    let reference = scenario.reference()?;
    let config = SimConfig {
        integrator: Integrator::Rk4,
        realizations: 1,
        ..scenario.sim_config()
    };
    let initial = scenario.initial_state();
    let run = |controller: &Controller| -> Result<Vec<f64>> {
        let r = simulate_run(truth.as_ref(), controller, &reference, &config, &initial, config.base_seed)?;
        if let Some(t) = r.diverged_at {
            return Err(Error::Divergence { time: t });
        }
        Ok(r.rmse(config.rmse_from))
    };
    let baseline_rmse = run(&build_controller(scenario, ControllerKind::Ct, None)?)?;
    let mut deterministic = scenario.clone();
    deterministic.controller.mode = ModeSpec::Deterministic;

    let mut points = Vec::with_capacity(sizes.len());
    for &m in sizes {
        let subset = stratified_subsample(&full, m, scenario.learning_curve.subsample_seed)?;
        let hyperparameters = if m == 0 {
            (0..full.output_dim())
                .map(|j| initial_hyperparameters(&full, j, &scenario.training.optimizer))
                .collect::<Result<Vec<_>>>()?
        } else {
            fit_hyperparameters(&subset, &scenario.training.optimizer, scenario.training.seed)?
                .into_iter()
                .map(|r| r.hyperparameters)
                .collect()
        };
        let gp = Arc::new(MultiGp::fit(&subset, &hyperparameters)?);
        let errors = (0..probes.len())
            .map(|i| {
                let x = probes.input(i);
                Ok((gp.predict_mean(x)? - true_residual(truth.as_ref(), estimate.as_ref(), x)).norm())
            })
            .collect::<Result<Vec<f64>>>()?;
        let controller = build_controller(&deterministic, ControllerKind::CtGp, Some(gp))?;
        points.push(LearningPoint {
            size: m,
            rmse: run(&controller)?,
            probe_median: median(errors),
            hyperparameters,
        });
    }
    let curve = LearningCurve {
        baseline_rmse,
        points,
        probe_size: probes.len(),
    };
    let mut manifest = scenario.manifest("ct-gp");
    manifest.push(format!("ct_baseline_rmse = {:?}", curve.baseline_rmse));
    manifest.push(format!("probe_points = {}", curve.probe_size));
    write(&scenario.output_dir().join("learning_curve.csv"), &curve.to_csv(&manifest))?;
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub structural: StructuralReport,
    pub bound: ModelErrorBound,
    pub conditions: ConditionReport,
}

impl CheckReport {
    /// Named hard failures; empty when everything holds.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self.structural.failures().into_iter().map(String::from).collect();
        if !self.conditions.c1 {
            out.push("C1: reference bounds not finite".into());
        }
        if !self.conditions.c2 {
            out.push(format!(
                "C2: sigma_min(K_d) = {:?} does not exceed beta = {:?}",
                self.conditions.sigma_min_kd, self.conditions.beta
            ));
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn to_text(&self) -> String {
        let s = &self.structural;
        let c = &self.conditions;
        let mut out = String::new();
        let _ = writeln!(out, "structural_samples = {}", s.samples);
        let _ = writeln!(out, "max_symmetry_defect = {:e}", s.max_symmetry_defect);
        let _ = writeln!(out, "min_mass_eigenvalue = {:?}", s.min_eigenvalue);
        let _ = writeln!(out, "max_skew_defect = {:e}", s.max_skew_defect);
        let _ = writeln!(out, "max_linearity_defect = {:e}", s.max_linearity_defect);
        let _ = writeln!(out, "mass_lipschitz_estimate = {:?}", s.lipschitz_estimate);
        let _ = writeln!(out, "c_q = {:?}", c.bounds.c_q);
        let _ = writeln!(out, "c_qd = {:?}", c.bounds.c_qd);
        let _ = writeln!(out, "c_qdd = {:?}", c.bounds.c_qdd);
        let _ = writeln!(out, "alpha = {:?}", self.bound.alpha);
        let _ = writeln!(out, "beta = {:?}", self.bound.beta);
        let _ = writeln!(out, "super_linear = {}", self.bound.super_linear);
        let _ = writeln!(out, "sigma_min_kd = {:?}", c.sigma_min_kd);
        let _ = writeln!(out, "C1 = {}", if c.c1 { "pass" } else { "fail" });
        let _ = writeln!(out, "gains_positive_definite = {}", c.gains_positive_definite);
        let _ = writeln!(out, "C2 = {}", if c.c2 { "pass" } else { "fail" });
        for f in self.failures() {
            let _ = writeln!(out, "failure: {f}");
        }
        let _ = writeln!(out, "result = {}", if self.passed() { "pass" } else { "fail" });
        out
    }
}

/// Structural properties of the plant, the sampled error bound and C1–C2.
/// The bound is sampled, not certified.
pub fn check(scenario: &Scenario) -> Result<CheckReport> {
    let mut truth = scenario.truth()?;
    if scenario.check.negate_coriolis {
        truth = Arc::new(NegatedCoriolis(truth));
    }
    let estimate = scenario.estimate();
    let spec = &scenario.check;
    let structural = check_structural_properties(truth.as_ref(), spec.samples, spec.seed);
    let bounds = scenario.reference()?.bounds();
    let bound = estimate_error_bound(truth.as_ref(), estimate.as_ref(), &bounds, spec.max_speed, spec.probes, spec.seed)?;
    let conditions = verify_conditions(&scenario.gains()?, &bound, &bounds);
    let report = CheckReport {
        structural,
        bound,
        conditions,
    };
    write(
        &scenario.output_dir().join("check.txt"),
        &with_comments(&scenario.manifest(&controller_label(scenario.controller.kind, scenario.controller.mode)), &report.to_text()),
    )?;
    Ok(report)
}
