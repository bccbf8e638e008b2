use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward_substitute, cholesky_in_place, column, forward_substitute, gram_matrix, squared_distance, Hyperparameters, TrainingSet};
use crate::error::{Error, Result};

/// Log evidence of one output column and its gradient in
/// `(ln λ, ln σ_f, ln σ_n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub gradient: [f64; 3],
    /// `−½ yᵀ(K+σ_n²I)⁻¹y`
    pub data_fit: f64,
    /// `−½ log|K+σ_n²I|`
    pub complexity: f64,
}

pub fn log_marginal_likelihood(data: &TrainingSet, phi: &Hyperparameters, output: usize) -> Result<LogLikelihood> {
    if output >= data.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: data.output_dim(),
            actual: output,
            context: "output index",
        });
    }
    let m = data.len();
    if m == 0 {
        return Ok(LogLikelihood {
            value: 0.0,
            gradient: [0.0; 3],
            data_fit: 0.0,
            complexity: 0.0,
        });
    }
    let inputs = data.inputs();
    let mut l = gram_matrix(inputs, phi)?;
    cholesky_in_place(&mut l).map_err(|(index, pivot)| Error::Cholesky { output, index, pivot })?;

    let y = data.output_column(output);
    let mut alpha = y.clone();
    forward_substitute(&l, alpha.as_mut_slice());
    backward_substitute(&l, alpha.as_mut_slice());

    let data_fit = -0.5 * y.dot(&alpha);
    let complexity = -(0..m).map(|i| l[(i, i)].ln()).sum::<f64>();
    let value = data_fit + complexity - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln();

    // W = ααᵀ − K⁻¹, then ∂L/∂θ = ½ tr(W ∂K/∂θ)
    let mut kinv = DMatrix::<f64>::identity(m, m);
    for j in 0..m {
        let col = &mut kinv.as_mut_slice()[j * m..(j + 1) * m];
        forward_substitute(&l, col);
        backward_substitute(&l, col);
    }

    let inv_l2 = 1.0 / (phi.length_scale * phi.length_scale);
    let mut g_len = 0.0;
    let mut g_sig = 0.0;
    let mut g_noise = 0.0;
    for j in 0..m {
        let xj = column(inputs, j);
        let w_jj = alpha[j] * alpha[j] - kinv[(j, j)];
        g_sig += w_jj * 2.0 * phi.signal_variance;
        g_noise += w_jj * 2.0 * phi.noise_variance;
        for i in (j + 1)..m {
            let d2 = squared_distance(column(inputs, i), xj);
            let k = phi.signal_variance * (-0.5 * d2 * inv_l2).exp();
            // off-diagonal terms appear twice in the trace
            let w = 2.0 * (alpha[i] * alpha[j] - kinv[(i, j)]);
            g_len += w * k * d2 * inv_l2;
            g_sig += w * 2.0 * k;
        }
    }
    Ok(LogLikelihood {
        value,
        gradient: [0.5 * g_len, 0.5 * g_sig, 0.5 * g_noise],
        data_fit,
        complexity,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOptions {
    /// Maximum accepted ascent steps per restart.
    pub budget: usize,
    /// Restart 0 starts at the initial guess; restart `r > 0` perturbs every
    /// log-parameter uniformly within ±1 decade using seed `r`.
    pub restarts: usize,
    pub gradient_tolerance: f64,
    /// Box on `(ln λ, ln σ_f, ln σ_n)`.
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            budget: 100,
            restarts: 5,
            gradient_tolerance: 1e-6,
            lower: [1e-3f64.ln(), 1e-4f64.ln(), 1e-6f64.ln()],
            upper: [1e3f64.ln(), 1e4f64.ln(), 1e2f64.ln()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerReport {
    pub hyperparameters: Hyperparameters,
    pub log_likelihood: f64,
    /// Log-likelihood after each accepted step of the winning restart,
    /// starting with its initial point.
    pub trace: Vec<f64>,
    pub failed_restarts: usize,
}

/// Gradient ascent on the log evidence in log-parameter space with Armijo
/// backtracking and deterministic restarts. Returns the best restart; never
/// worse than the initial guess.
pub fn optimize_hyperparameters(
    data: &TrainingSet,
    output: usize,
    initial: &Hyperparameters,
    options: &OptimizerOptions,
) -> Result<OptimizerReport> {
    if options.budget == 0 || data.is_empty() {
        let value = log_marginal_likelihood(data, initial, output).map(|l| l.value).unwrap_or(f64::NEG_INFINITY);
        return Ok(OptimizerReport {
            hyperparameters: *initial,
            log_likelihood: value,
            trace: vec![value],
            failed_restarts: 0,
        });
    }
    let theta0 = clamp(initial.to_log_params(), options);
    let mut best: Option<OptimizerReport> = None;
    let mut failed = 0;
    for restart in 0..options.restarts.max(1) {
        let start = if restart == 0 {
            theta0
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(restart as u64);
            let ln10 = std::f64::consts::LN_10;
            let mut t = theta0;
            for v in &mut t {
                *v += rng.random_range(-ln10..=ln10);
            }
            clamp(t, options)
        };
        match ascend(data, output, start, options) {
            Some(report) => {
                if best.as_ref().is_none_or(|b| report.log_likelihood > b.log_likelihood) {
                    best = Some(report);
                }
            }
            None => failed += 1,
        }
    }
    let mut best = best.ok_or(Error::OptimizationFailed)?;
    best.failed_restarts = failed;
    Ok(best)
}

fn clamp(mut theta: [f64; 3], options: &OptimizerOptions) -> [f64; 3] {
    for i in 0..3 {
        theta[i] = theta[i].clamp(options.lower[i], options.upper[i]);
    }
    theta
}

fn ascend(data: &TrainingSet, output: usize, start: [f64; 3], options: &OptimizerOptions) -> Option<OptimizerReport> {
    let eval = |t: [f64; 3]| log_marginal_likelihood(data, &Hyperparameters::from_log_params(t), output).ok();
    let mut theta = start;
    let mut current = eval(theta)?;
    let mut trace = vec![current.value];
    let mut step = 0.5;
    for _ in 0..options.budget {
        let g = current.gradient;
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(gnorm > options.gradient_tolerance) {
            break;
        }
        let mut accepted = false;
        while step > 1e-10 {
            let mut cand = theta;
            for i in 0..3 {
                cand[i] += step * g[i] / gnorm;
            }
            let cand = clamp(cand, options);
            let moved: f64 = (0..3).map(|i| g[i] * (cand[i] - theta[i])).sum();
            if moved <= 0.0 {
                break;
            }
            if let Some(next) = eval(cand) {
                if next.value >= current.value + 1e-4 * moved {
                    theta = cand;
                    current = next;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(current.value);
        step = (step * 2.0).min(2.0);
    }
    Some(OptimizerReport {
        hyperparameters: Hyperparameters::from_log_params(theta),
        log_likelihood: current.value,
        trace,
        failed_restarts: 0,
    })
}
