//! Exact multi-output Gaussian process regression with a squared-exponential
//! kernel.
//!
//! Every output dimension gets its own [`FittedGp`] over a shared input
//! matrix. Fitting factors `K + σ_n² I` once; afterwards a mean query costs
//! O(m·d) and a variance query one triangular solve, O(m²).

mod io;
mod likelihood;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use io::{hyperparameters_from_str, hyperparameters_to_string, read_hyperparameters, write_hyperparameters};
pub use likelihood::{
    log_marginal_likelihood, optimize_hyperparameters, LogLikelihood, OptimizerOptions,
    OptimizerReport,
};

/// Posterior variances below zero but above this are treated as rounding noise.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = -1e-12;

/// Kernel parameters for one output: isotropic length-scale, signal variance
/// and observation-noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Hyperparameters {
    /// `noise_variance` may be zero for interpolation experiments; a singular
    /// Gram matrix is then reported by [`MultiGp::fit`].
    pub fn new(length_scale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        let ok = length_scale.is_finite()
            && length_scale > 0.0
            && signal_variance.is_finite()
            && signal_variance >= 0.0
            && noise_variance.is_finite()
            && noise_variance >= 0.0;
        if !ok {
            return Err(Error::Domain(format!(
                "hyperparameters out of range: lambda={length_scale}, sigma_f^2={signal_variance}, sigma_n^2={noise_variance}"
            )));
        }
        Ok(Self {
            length_scale,
            signal_variance,
            noise_variance,
        })
    }

    pub fn from_std(length_scale: f64, signal_std: f64, noise_std: f64) -> Result<Self> {
        if signal_std < 0.0 || noise_std < 0.0 {
            return Err(Error::Domain("standard deviations must be non-negative".into()));
        }
        Self::new(length_scale, signal_std * signal_std, noise_std * noise_std)
    }

    pub fn signal_std(&self) -> f64 {
        self.signal_variance.sqrt()
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_variance.sqrt()
    }

    /// `(ln λ, ln σ_f, ln σ_n)`, the coordinates the optimiser works in.
    pub fn to_log_params(&self) -> [f64; 3] {
        [
            self.length_scale.ln(),
            0.5 * self.signal_variance.ln(),
            0.5 * self.noise_variance.ln(),
        ]
    }

    pub fn from_log_params(theta: [f64; 3]) -> Self {
        Self {
            length_scale: theta[0].exp(),
            signal_variance: (2.0 * theta[1]).exp(),
            noise_variance: (2.0 * theta[2]).exp(),
        }
    }
}

/// Training pairs: `inputs` is d×m (one column per point), `outputs` is m×n.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() != outputs.nrows() {
            return Err(Error::DimensionMismatch {
                expected: inputs.ncols(),
                actual: outputs.nrows(),
                context: "training output rows vs input columns",
            });
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("training data contains non-finite values".into()));
        }
        Ok(Self { inputs, outputs })
    }

    pub fn empty(input_dim: usize, output_dim: usize) -> Self {
        Self {
            inputs: DMatrix::zeros(input_dim, 0),
            outputs: DMatrix::zeros(0, output_dim),
        }
    }

    /// Builds a set from per-point `(input, output)` rows.
    pub fn from_pairs(input_dim: usize, output_dim: usize, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        for (x, y) in pairs {
            if x.len() != input_dim {
                return Err(Error::DimensionMismatch {
                    expected: input_dim,
                    actual: x.len(),
                    context: "training input",
                });
            }
            if y.len() != output_dim {
                return Err(Error::DimensionMismatch {
                    expected: output_dim,
                    actual: y.len(),
                    context: "training output",
                });
            }
        }
        let m = pairs.len();
        let inputs = DMatrix::from_fn(input_dim, m, |r, c| pairs[c].0[r]);
        let outputs = DMatrix::from_fn(m, output_dim, |r, c| pairs[r].1[c]);
        Self::new(inputs, outputs)
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f64] {
        column(&self.inputs, i)
    }

    pub fn output_column(&self, j: usize) -> DVector<f64> {
        self.outputs.column(j).into_owned()
    }

    /// Keeps the points at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let inputs = DMatrix::from_fn(self.input_dim(), indices.len(), |r, c| self.inputs[(r, indices[c])]);
        let outputs = DMatrix::from_fn(indices.len(), self.output_dim(), |r, c| self.outputs[(indices[r], c)]);
        Self { inputs, outputs }
    }
}

fn column(m: &DMatrix<f64>, i: usize) -> &[f64] {
    let d = m.nrows();
    &m.as_slice()[i * d..(i + 1) * d]
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn se(sq_dist: f64, phi: &Hyperparameters) -> f64 {
    phi.signal_variance * (-sq_dist / (2.0 * phi.length_scale * phi.length_scale)).exp()
}

/// Squared-exponential covariance `σ_f² exp(−‖x−x′‖² / 2λ²)`.
pub fn kernel_eval(x: &[f64], x_prime: &[f64], phi: &Hyperparameters) -> Result<f64> {
    if x.len() != x_prime.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: x_prime.len(),
            context: "kernel arguments",
        });
    }
    if x.iter().chain(x_prime).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite kernel argument".into()));
    }
    if !(phi.length_scale > 0.0) {
        return Err(Error::Domain("length-scale must be positive".into()));
    }
    Ok(se(squared_distance(x, x_prime), phi))
}

/// `K(X, X) + σ_n² I` for a d×m input matrix.
pub fn gram_matrix(inputs: &DMatrix<f64>, phi: &Hyperparameters) -> Result<DMatrix<f64>> {
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite training input".into()));
    }
    let m = inputs.ncols();
    let mut k = DMatrix::zeros(m, m);
    for j in 0..m {
        let xj = column(inputs, j);
        k[(j, j)] = phi.signal_variance + phi.noise_variance;
        for i in (j + 1)..m {
            let v = se(squared_distance(column(inputs, i), xj), phi);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// In-place lower Cholesky factor of a symmetric matrix (upper triangle is
/// zeroed). On failure returns the offending pivot index and value.
pub(crate) fn cholesky_in_place(a: &mut DMatrix<f64>) -> std::result::Result<(), (usize, f64)> {
    let m = a.nrows();
    let data = a.as_mut_slice();
    for j in 0..m {
        // column j, rows j..m, minus contributions of earlier columns
        for k in 0..j {
            let ljk = data[k * m + j];
            if ljk == 0.0 {
                continue;
            }
            let (head, tail) = data.split_at_mut(j * m);
            let src = &head[k * m + j..k * m + m];
            let dst = &mut tail[j..m];
            for (d, s) in dst.iter_mut().zip(src) {
                *d -= ljk * s;
            }
        }
        let pivot = data[j * m + j];
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err((j, pivot));
        }
        let diag = pivot.sqrt();
        data[j * m + j] = diag;
        let inv = 1.0 / diag;
        for v in &mut data[j * m + j + 1..(j + 1) * m] {
            *v *= inv;
        }
    }
    for j in 1..m {
        for i in 0..j {
            data[j * m + i] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L v = b` in place for lower-triangular column-major `L`.
pub(crate) fn forward_substitute(l: &DMatrix<f64>, b: &mut [f64]) {
    let m = l.nrows();
    let data = l.as_slice();
    for j in 0..m {
        let vj = b[j] / data[j * m + j];
        b[j] = vj;
        if vj != 0.0 {
            let col = &data[j * m + j + 1..(j + 1) * m];
            for (bi, lij) in b[j + 1..].iter_mut().zip(col) {
                *bi -= vj * lij;
            }
        }
    }
}

/// Solves `Lᵀ v = b` in place.
pub(crate) fn backward_substitute(l: &DMatrix<f64>, b: &mut [f64]) {
    let m = l.nrows();
    let data = l.as_slice();
    for j in (0..m).rev() {
        let col = &data[j * m + j + 1..(j + 1) * m];
        let dot: f64 = col.iter().zip(&b[j + 1..]).map(|(a, c)| a * c).sum();
        b[j] = (b[j] - dot) / data[j * m + j];
    }
}

/// One output's posterior, precomputed for repeated queries.
#[derive(Debug, Clone)]
pub struct FittedGp {
    hyperparameters: Hyperparameters,
    training_inputs: Arc<DMatrix<f64>>,
    cholesky_factor: DMatrix<f64>,
    weights: DVector<f64>,
}

impl FittedGp {
    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyperparameters
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cholesky_factor
    }

    /// `α = (K + σ_n² I)⁻¹ y`.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn training_inputs(&self) -> &Arc<DMatrix<f64>> {
        &self.training_inputs
    }

    fn kernel_vector(&self, x: &[f64]) -> Vec<f64> {
        let inputs = &*self.training_inputs;
        (0..inputs.ncols())
            .map(|i| se(squared_distance(column(inputs, i), x), &self.hyperparameters))
            .collect()
    }

    fn mean_from(&self, k: &[f64]) -> f64 {
        k.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum()
    }

    fn variance_from(&self, mut k: Vec<f64>, output: usize) -> Result<f64> {
        forward_substitute(&self.cholesky_factor, &mut k);
        let explained: f64 = k.iter().map(|v| v * v).sum();
        let var = self.hyperparameters.signal_variance - explained;
        if var < 0.0 {
            if var < NEGATIVE_VARIANCE_TOLERANCE {
                return Err(Error::NegativeVariance { output, value: var });
            }
            return Ok(0.0);
        }
        Ok(var)
    }

    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        if self.weights.is_empty() {
            return 0.0;
        }
        self.mean_from(&self.kernel_vector(x))
    }
}

/// Posterior mean and standard deviation per output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

/// `n` independent GPs sharing one input matrix.
#[derive(Debug, Clone)]
pub struct MultiGp {
    input_dim: usize,
    inputs: Arc<DMatrix<f64>>,
    components: Vec<FittedGp>,
}

impl MultiGp {
    /// Factors the Gram matrix of every output. `hyperparameters` holds one
    /// entry per output column.
    pub fn fit(data: &TrainingSet, hyperparameters: &[Hyperparameters]) -> Result<Self> {
        if hyperparameters.len() != data.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: data.output_dim(),
                actual: hyperparameters.len(),
                context: "hyperparameter sets vs output columns",
            });
        }
        let inputs = Arc::new(data.inputs().clone());
        let mut components = Vec::with_capacity(hyperparameters.len());
        for (output, phi) in hyperparameters.iter().enumerate() {
            let mut l = gram_matrix(&inputs, phi)?;
            cholesky_in_place(&mut l).map_err(|(index, pivot)| Error::Cholesky { output, index, pivot })?;
            let mut alpha = data.output_column(output);
            forward_substitute(&l, alpha.as_mut_slice());
            backward_substitute(&l, alpha.as_mut_slice());
            components.push(FittedGp {
                hyperparameters: *phi,
                training_inputs: Arc::clone(&inputs),
                cholesky_factor: l,
                weights: alpha,
            });
        }
        Ok(Self {
            input_dim: data.input_dim(),
            inputs,
            components,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn components(&self) -> &[FittedGp] {
        &self.components
    }

    pub fn hyperparameters(&self) -> Vec<Hyperparameters> {
        self.components.iter().map(|c| c.hyperparameters).collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
                context: "GP query point",
            });
        }
        Ok(())
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(DVector::from_iterator(
            self.components.len(),
            self.components.iter().map(|c| c.predict_mean(x)),
        ))
    }

    pub fn predict_var(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let mut out = DVector::zeros(self.components.len());
        for (i, c) in self.components.iter().enumerate() {
            out[i] = if self.is_empty() {
                c.hyperparameters.signal_variance
            } else {
                c.variance_from(c.kernel_vector(x), i)?
            };
        }
        Ok(out)
    }

    /// Mean and standard deviation sharing one kernel-vector evaluation.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.check_dim(x)?;
        let n = self.components.len();
        let mut mean = DVector::zeros(n);
        let mut std = DVector::zeros(n);
        for (i, c) in self.components.iter().enumerate() {
            if self.is_empty() {
                std[i] = c.hyperparameters.signal_std();
                continue;
            }
            let k = c.kernel_vector(x);
            mean[i] = c.mean_from(&k);
            std[i] = c.variance_from(k, i)?.sqrt();
        }
        Ok(Prediction { mean, std })
    }
}
