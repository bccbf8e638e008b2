use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpct_core::harness::{self, ControllerKind, Overrides, Scenario, DEFAULT_T_SKIP};
use gpct_core::Error;

// a closed pipe (`gpct ... | head`) is not an error worth a panic
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! say_raw {
    ($($arg:tt)*) => {{
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

/// GP-compensated computed-torque control experiments.
#[derive(Debug, Parser)]
#[command(name = "gpct", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the training set and optimise GP hyperparameters.
    Train(Common),
    /// Simulate the configured controller (one run or an ensemble).
    Simulate(Common),
    /// RMSE per joint of trajectory CSVs sharing a time grid.
    Evaluate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Start of the RMSE window, s.
        #[arg(long, default_value_t = DEFAULT_T_SKIP)]
        t_skip: f64,
        /// Write `rmse.csv` here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CT-GP tracking error and GP consistency against training-set size.
    LearningCurve {
        #[command(flatten)]
        common: Common,
        /// Comma-separated, strictly ascending; the config's list by default.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Structural properties, model-error bound and gain conditions.
    Check(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the simulation and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Run this controller instead of the configured one (hg-pd, lg-pd, ct,
    /// ct-sp, ct-gp).
    #[arg(long, value_parser = parse_kind)]
    controller: Option<ControllerKind>,
}

fn parse_kind(s: &str) -> Result<ControllerKind, String> {
    ControllerKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown controller `{s}`"))
}

impl Common {
    fn scenario(&self) -> Result<Scenario, Error> {
        let mut s = Scenario::load(&self.config)?;
        s.apply(&Overrides {
            // relative to the working directory, unlike paths inside the file
            out: self.out.as_ref().map(|p| absolute(p)),
            seed: self.seed,
            realizations: self.realizations,
            controller: self.controller,
        })?;
        Ok(s)
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Train(c) => {
            let s = c.scenario()?;
            let r = harness::train(&s)?;
            say!("training points: {} (dropped {})", r.data.set.len(), r.data.dropped);
            for (j, rep) in r.reports.iter().enumerate() {
                let h = rep.hyperparameters;
                say!(
                    "output {}: lambda = {:.6} sigma_f = {:.6} sigma_n = {:.6} log likelihood = {:.6}",
                    j + 1,
                    h.length_scale,
                    h.signal_std(),
                    h.noise_std(),
                    rep.log_likelihood
                );
            }
            for f in &r.files {
                say!("wrote {}", f.display());
            }
        }
        Command::Simulate(c) => {
            let s = c.scenario()?;
            let r = harness::simulate(&s)?;
            let stats = &r.ensemble.stats;
            say!("{}: rmse {}", r.label, fmt_vec(&r.rmse()));
            if stats.realizations > 1 {
                say!("realizations: {} diverged: {}", stats.realizations, stats.diverged);
            }
            for f in &r.files {
                say!("wrote {}", f.display());
            }
        }
        Command::Evaluate { files, t_skip, out } => {
            let report = harness::evaluate(&files, t_skip)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                    let path = dir.join("rmse.csv");
                    std::fs::write(&path, report.to_csv()).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                    for row in &report.rows {
                        say!("{}: rmse {}", row.label, fmt_vec(&row.rmse));
                    }
                    say!("wrote {}", path.display());
                }
                None => say_raw!("{}", report.to_csv()),
            }
        }
        Command::LearningCurve { common, sizes } => {
            let s = common.scenario()?;
            let sizes = sizes.unwrap_or_else(|| s.learning_curve.sizes.clone());
            let curve = harness::learning_curve(&s, &sizes)?;
            say!("ct baseline: rmse {}", fmt_vec(&curve.baseline_rmse));
            for p in &curve.points {
                say!("m = {:>4}: rmse {} probe median {:.6}", p.size, fmt_vec(&p.rmse), p.probe_median);
            }
            say!("wrote {}", s.output_dir().join("learning_curve.csv").display());
        }
        Command::Check(c) => {
            let s = c.scenario()?;
            let report = harness::check(&s)?;
            say_raw!("{}", report.to_text());
            if !report.passed() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are configuration errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
