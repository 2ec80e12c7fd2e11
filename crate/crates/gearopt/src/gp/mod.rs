//! Multi-task Gaussian process regression over (input, task) pairs.
//!
//! A single correlation kernel over scalar inputs is shared by every task;
//! a positive semi-definite task covariance, learned from data, couples the
//! tasks so that observations from one task inform predictions for the
//! others. Observation noise is per-task and enters on the Gram diagonal
//! only. All posterior math runs through a cached Cholesky factor; no matrix
//! is inverted explicitly.
//!
//! Conventions used throughout:
//! - inputs are expected pre-normalized to `[0, 1]` by the caller (the
//!   optimization layer divides gear ratios by the grid range),
//! - the input kernel has unit amplitude (`k(x, x) = 1`); signal variance
//!   lives entirely in the task covariance,
//! - outputs are standardized by the caller; [`Standardizer`] provides the
//!   transform and its inverse.

mod fit;

pub use fit::{fit_hyperparameters, fit_with_options, FitOptions, FitOutcome};

use std::io::{self, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;
use thiserror::Error;

/// Errors from model construction, fitting, and prediction.
#[derive(Debug, Error)]
pub enum GpError {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
}

/// Observation triples accumulated across tasks.
///
/// An empty dataset is a legal state; `num_tasks` may exceed the number of
/// tasks actually observed (a task can be declared before its first sample).
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    tasks: Vec<usize>,
    num_tasks: usize,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn empty(num_tasks: usize) -> Self {
        Self {
            num_tasks,
            ..Self::default()
        }
    }

    /// Builds a dataset from parallel vectors, inferring the task count.
    pub fn from_parts(
        inputs: Vec<f64>,
        outputs: Vec<f64>,
        tasks: Vec<usize>,
    ) -> Result<Self, GpError> {
        if inputs.len() != outputs.len() || inputs.len() != tasks.len() {
            return Err(GpError::ParameterDomain(format!(
                "mismatched lengths: {} inputs, {} outputs, {} task indices",
                inputs.len(),
                outputs.len(),
                tasks.len()
            )));
        }
        let num_tasks = tasks.iter().max().map_or(0, |&t| t + 1);
        Ok(Self {
            inputs,
            outputs,
            tasks,
            num_tasks,
        })
    }

    pub fn push(&mut self, input: f64, output: f64, task: usize) -> Result<(), GpError> {
        if task >= self.num_tasks {
            return Err(GpError::ParameterDomain(format!(
                "task index {task} out of range for {} tasks",
                self.num_tasks
            )));
        }
        self.inputs.push(input);
        self.outputs.push(output);
        self.tasks.push(task);
        Ok(())
    }

    /// Grows the declared task count to include `task`.
    pub fn ensure_task(&mut self, task: usize) {
        self.num_tasks = self.num_tasks.max(task + 1);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn tasks(&self) -> &[usize] {
        &self.tasks
    }
}

/// Kernel and noise parameters of the multi-task model.
///
/// The task covariance is held as its lower-triangular factor `L` (row `a`
/// has `a + 1` entries), so `task_cov(a, b) = Σ_k L[a][k]·L[b][k]` is
/// positive semi-definite by construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MtgpHyperparams {
    lengthscale: f64,
    task_factor: Vec<Vec<f64>>,
    noise_vars: Vec<f64>,
}

impl MtgpHyperparams {
    pub fn new(
        lengthscale: f64,
        task_factor: Vec<Vec<f64>>,
        noise_vars: Vec<f64>,
    ) -> Result<Self, GpError> {
        if !(lengthscale > 0.0) {
            return Err(GpError::ParameterDomain(format!(
                "lengthscale must be positive, got {lengthscale}"
            )));
        }
        if task_factor.len() != noise_vars.len() {
            return Err(GpError::ParameterDomain(format!(
                "{} task factor rows but {} noise variances",
                task_factor.len(),
                noise_vars.len()
            )));
        }
        for (a, row) in task_factor.iter().enumerate() {
            if row.len() != a + 1 {
                return Err(GpError::ParameterDomain(format!(
                    "task factor row {a} has {} entries, expected {}",
                    row.len(),
                    a + 1
                )));
            }
            if !(row[a] > 0.0) {
                return Err(GpError::ParameterDomain(format!(
                    "task factor diagonal entry {a} must be positive, got {}",
                    row[a]
                )));
            }
        }
        for (t, &v) in noise_vars.iter().enumerate() {
            if !(v > 0.0) {
                return Err(GpError::ParameterDomain(format!(
                    "noise variance for task {t} must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            lengthscale,
            task_factor,
            noise_vars,
        })
    }

    /// Single-task parameters with the given signal variance.
    pub fn single_task(
        lengthscale: f64,
        signal_var: f64,
        noise_var: f64,
    ) -> Result<Self, GpError> {
        if !(signal_var > 0.0) {
            return Err(GpError::ParameterDomain(format!(
                "signal variance must be positive, got {signal_var}"
            )));
        }
        Self::new(lengthscale, vec![vec![signal_var.sqrt()]], vec![noise_var])
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn num_tasks(&self) -> usize {
        self.task_factor.len()
    }

    pub fn task_factor(&self) -> &[Vec<f64>] {
        &self.task_factor
    }

    pub fn noise_vars(&self) -> &[f64] {
        &self.noise_vars
    }

    /// Task covariance entry `Σ_k L[a][k]·L[b][k]`.
    pub fn task_cov(&self, a: usize, b: usize) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        (0..=lo)
            .map(|k| self.task_factor[lo][k] * self.task_factor[hi][k])
            .sum()
    }

    pub fn task_cov_matrix(&self) -> Vec<Vec<f64>> {
        let m = self.num_tasks();
        (0..m)
            .map(|a| (0..m).map(|b| self.task_cov(a, b)).collect())
            .collect()
    }

    /// Task covariance normalized to unit diagonal.
    pub fn task_correlation(&self) -> Vec<Vec<f64>> {
        let m = self.num_tasks();
        let scale: Vec<f64> = (0..m).map(|a| self.task_cov(a, a).sqrt()).collect();
        (0..m)
            .map(|a| {
                (0..m)
                    .map(|b| self.task_cov(a, b) / (scale[a] * scale[b]))
                    .collect()
            })
            .collect()
    }

    /// Adds a task whose factor row mirrors the last existing one, so a task
    /// with no data yet inherits its predecessor's covariance structure.
    pub fn expanded_with_task(&self, fresh_diag: f64, fresh_noise_var: f64) -> Self {
        let mut task_factor = self.task_factor.clone();
        let mut row = task_factor.last().cloned().unwrap_or_default();
        row.push(fresh_diag);
        task_factor.push(row);
        let mut noise_vars = self.noise_vars.clone();
        noise_vars.push(fresh_noise_var);
        Self {
            lengthscale: self.lengthscale,
            task_factor,
            noise_vars,
        }
    }
}

/// Unit-amplitude squared-exponential kernel over pre-normalized inputs.
pub fn input_kernel(x_a: f64, x_b: f64, lengthscale: f64) -> Result<f64, GpError> {
    if !(lengthscale > 0.0) {
        return Err(GpError::ParameterDomain(format!(
            "lengthscale must be positive, got {lengthscale}"
        )));
    }
    let d = x_a - x_b;
    Ok((-d * d / (2.0 * lengthscale * lengthscale)).exp())
}

/// Predictive mean and variance at one (input, task) query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

/// Factorized training covariance.
///
/// `matrix` is the Gram matrix as constructed; the Cholesky factor is of
/// `matrix + jitter·I`, with `jitter` escalated from 1e-10 to 1e-6 in decade
/// steps only when the plain factorization fails.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl GramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// `log |K + jitter·I|` from the Cholesky diagonal.
    pub fn log_det(&self) -> f64 {
        self.chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
            * 2.0
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

pub(crate) fn cholesky_with_jitter(
    k: &DMatrix<f64>,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    if let Some(chol) = k.clone().cholesky() {
        return Ok((chol, 0.0));
    }
    let mut jitter = 1e-10;
    while jitter <= 1.05e-6 {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(chol) = kj.cholesky() {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
    }
    let diag = k.diagonal();
    Err(GpError::NumericalDegeneracy(format!(
        "Cholesky failed for {}x{} Gram matrix at jitter up to 1e-6 (diagonal in [{:.3e}, {:.3e}])",
        k.nrows(),
        k.ncols(),
        diag.min(),
        diag.max()
    )))
}

/// Builds and factorizes the training covariance
/// `K_ij = task_cov(t_i, t_j)·k(x_i, x_j) + [i = j]·noise(t_i)`.
pub fn build_gram(data: &Dataset, h: &MtgpHyperparams) -> Result<GramMatrix, GpError> {
    if let Some(&t) = data.tasks().iter().find(|&&t| t >= h.num_tasks()) {
        return Err(GpError::ParameterDomain(format!(
            "dataset references task {t} but hyperparameters cover {} tasks",
            h.num_tasks()
        )));
    }
    let n = data.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = h.task_cov(data.tasks[i], data.tasks[j])
                * input_kernel(data.inputs[i], data.inputs[j], h.lengthscale)?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += h.noise_vars[data.tasks[i]];
    }
    let (chol, jitter) = cholesky_with_jitter(&k)?;
    Ok(GramMatrix {
        matrix: k,
        chol,
        jitter,
    })
}

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// `-½ yᵀK⁻¹y - ½ log|K| - (T/2)·log 2π`, via the Cholesky factor.
pub fn log_marginal_likelihood(data: &Dataset, h: &MtgpHyperparams) -> Result<f64, GpError> {
    if data.is_empty() {
        return Err(GpError::ParameterDomain(
            "marginal likelihood requires at least one observation".into(),
        ));
    }
    let gram = build_gram(data, h)?;
    let y = DVector::from_column_slice(data.outputs());
    let alpha = gram.solve(&y);
    Ok(-0.5 * y.dot(&alpha) - 0.5 * gram.log_det() - 0.5 * data.len() as f64 * LN_2PI)
}

/// A dataset paired with hyperparameters and the factorized Gram matrix.
///
/// Immutable once constructed; safe to share across threads for prediction.
#[derive(Debug, Clone)]
pub struct FittedMtgp {
    data: Dataset,
    hyperparams: MtgpHyperparams,
    gram: Option<GramMatrix>,
    alpha: Option<DVector<f64>>,
}

impl FittedMtgp {
    pub fn new(data: Dataset, hyperparams: MtgpHyperparams) -> Result<Self, GpError> {
        if data.num_tasks() > hyperparams.num_tasks() {
            return Err(GpError::ParameterDomain(format!(
                "dataset declares {} tasks but hyperparameters cover {}",
                data.num_tasks(),
                hyperparams.num_tasks()
            )));
        }
        if data.is_empty() {
            return Ok(Self {
                data,
                hyperparams,
                gram: None,
                alpha: None,
            });
        }
        let gram = build_gram(&data, &hyperparams)?;
        let y = DVector::from_column_slice(data.outputs());
        let alpha = gram.solve(&y);
        Ok(Self {
            data,
            hyperparams,
            gram: Some(gram),
            alpha: Some(alpha),
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn hyperparams(&self) -> &MtgpHyperparams {
        &self.hyperparams
    }

    pub fn gram(&self) -> Option<&GramMatrix> {
        self.gram.as_ref()
    }

    /// Predictive distribution at `(input, task)`. With no training data this
    /// is the prior: zero mean, variance equal to the task's own covariance.
    pub fn posterior(&self, input: f64, task: usize) -> Result<Posterior, GpError> {
        if task >= self.hyperparams.num_tasks() {
            return Err(GpError::ParameterDomain(format!(
                "task index {task} out of range for {} tasks",
                self.hyperparams.num_tasks()
            )));
        }
        let prior_var = self.hyperparams.task_cov(task, task);
        let (gram, alpha) = match (&self.gram, &self.alpha) {
            (Some(g), Some(a)) => (g, a),
            _ => {
                return Ok(Posterior {
                    mean: 0.0,
                    variance: prior_var,
                })
            }
        };
        let n = self.data.len();
        let mut cross = DVector::zeros(n);
        for i in 0..n {
            cross[i] = self.hyperparams.task_cov(task, self.data.tasks[i])
                * input_kernel(input, self.data.inputs[i], self.hyperparams.lengthscale)?;
        }
        let mean = cross.dot(alpha);
        let variance = (prior_var - cross.dot(&gram.solve(&cross))).max(0.0);
        Ok(Posterior { mean, variance })
    }
}

/// One-off posterior query; prefer [`FittedMtgp`] when predicting repeatedly.
pub fn posterior(
    data: &Dataset,
    h: &MtgpHyperparams,
    input: f64,
    task: usize,
) -> Result<Posterior, GpError> {
    FittedMtgp::new(data.clone(), h.clone())?.posterior(input, task)
}

/// Affine output transform `z = (y - mean) / scale`.
///
/// Fit over all observations so far; degenerates to the identity when fewer
/// than two values (or zero spread) are available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: 0.0,
            scale: 1.0,
        }
    }

    pub fn fit(values: &[f64]) -> Self {
        if values.len() < 2 {
            return Self::identity();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = var.sqrt();
        if scale < 1e-12 {
            Self { mean, scale: 1.0 }
        } else {
            Self { mean, scale }
        }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.scale + self.mean
    }
}

/// A positive parameter range; bounds are enforced in log space when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRange {
    pub lo: f64,
    pub hi: f64,
}

impl LogRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self, GpError> {
        if !(lo > 0.0 && lo < hi) {
            return Err(GpError::ParameterDomain(format!(
                "invalid log range [{lo}, {hi}]: need 0 < lo < hi"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn geometric_center(&self) -> f64 {
        (self.lo * self.hi).sqrt()
    }
}

/// Box bounds plus a weak quadratic pull toward the box centers, applied to
/// the fitting objective in transformed parameter space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperPrior {
    /// Bounds on the input kernel lengthscale.
    pub lengthscale: LogRange,
    /// Bounds on the diagonal entries of the task factor.
    pub task_scale: LogRange,
    /// Symmetric bound on off-diagonal task factor entries.
    pub task_offdiag_limit: f64,
    /// Bounds on per-task noise variance.
    pub noise: LogRange,
    /// Weight of the quadratic pull toward the box centers.
    pub pull_weight: f64,
}

impl Default for HyperPrior {
    fn default() -> Self {
        // the noise floor sits at four times the convergence threshold on
        // posterior variance (5e-4), so no fit can claim convergence at a
        // candidate from smooth interpolation alone: the variance there only
        // crosses the threshold after repeated confirming observations
        Self {
            lengthscale: LogRange { lo: 0.02, hi: 2.0 },
            task_scale: LogRange { lo: 0.1, hi: 10.0 },
            task_offdiag_limit: 4.0,
            noise: LogRange { lo: 2e-3, hi: 1.0 },
            pull_weight: 1e-2,
        }
    }
}

impl HyperPrior {
    pub fn validate(&self) -> Result<(), GpError> {
        LogRange::new(self.lengthscale.lo, self.lengthscale.hi)?;
        LogRange::new(self.task_scale.lo, self.task_scale.hi)?;
        LogRange::new(self.noise.lo, self.noise.hi)?;
        if !(self.task_offdiag_limit > 0.0) {
            return Err(GpError::ParameterDomain(format!(
                "off-diagonal limit must be positive, got {}",
                self.task_offdiag_limit
            )));
        }
        if self.pull_weight < 0.0 {
            return Err(GpError::ParameterDomain(format!(
                "pull weight must be non-negative, got {}",
                self.pull_weight
            )));
        }
        Ok(())
    }

    /// Hyperparameters at the box centers: geometric-center lengthscale and
    /// noise, diagonal task factor, zero off-diagonals.
    pub fn center_hyperparams(&self, num_tasks: usize) -> MtgpHyperparams {
        let diag = self.task_scale.geometric_center();
        let task_factor = (0..num_tasks)
            .map(|a| {
                let mut row = vec![0.0; a + 1];
                row[a] = diag;
                row
            })
            .collect();
        MtgpHyperparams {
            lengthscale: self.lengthscale.geometric_center(),
            task_factor,
            noise_vars: vec![self.noise.geometric_center(); num_tasks],
        }
    }
}

/// One line of the observation-log CSV.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetCsvRow {
    pub trial_index: usize,
    pub gear_ratio: f64,
    pub raw_score: f64,
    pub normalized_score: f64,
    pub task_index: usize,
    pub task_label: String,
}

pub fn write_dataset_csv<W: Write>(mut w: W, rows: &[DatasetCsvRow]) -> io::Result<()> {
    writeln!(
        w,
        "trial_index,gear_ratio,raw_score,normalized_score,task_index,task_label"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.trial_index, r.gear_ratio, r.raw_score, r.normalized_score, r.task_index, r.task_label
        )?;
    }
    Ok(())
}

/// Flat key-value dump of hyperparameters and output-normalization constants.
pub fn write_hyperparams_dump<W: Write>(
    mut w: W,
    h: &MtgpHyperparams,
    standardizer: &Standardizer,
) -> io::Result<()> {
    writeln!(w, "lengthscale = {}", h.lengthscale)?;
    for (a, row) in h.task_factor.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            writeln!(w, "task_factor_{a}_{b} = {v}")?;
        }
    }
    for (t, v) in h.noise_vars.iter().enumerate() {
        writeln!(w, "noise_var_{t} = {v}")?;
    }
    writeln!(w, "y_mean = {}", standardizer.mean)?;
    writeln!(w, "y_scale = {}", standardizer.scale)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_hyperparams(rng: &mut ChaCha12Rng, num_tasks: usize) -> MtgpHyperparams {
        let lengthscale = rng.random_range(0.05..1.5);
        let task_factor = (0..num_tasks)
            .map(|a| {
                let mut row: Vec<f64> = (0..a).map(|_| rng.random_range(-1.0..1.0)).collect();
                row.push(rng.random_range(0.3..2.0));
                row
            })
            .collect();
        let noise_vars = (0..num_tasks)
            .map(|_| rng.random_range(1e-4..0.5))
            .collect();
        MtgpHyperparams::new(lengthscale, task_factor, noise_vars).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha12Rng, len: usize, num_tasks: usize) -> Dataset {
        let inputs = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let outputs = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tasks = (0..len).map(|_| rng.random_range(0..num_tasks)).collect();
        let mut data = Dataset::from_parts(inputs, outputs, tasks).unwrap();
        data.ensure_task(num_tasks - 1);
        data
    }

    // Explicit-inverse reference used to cross-check the Cholesky path.
    fn dense_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut aug = DMatrix::zeros(n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = m[(i, j)];
            }
            aug[(i, n + i)] = 1.0;
        }
        for col in 0..n {
            let mut pivot = col;
            for r in col + 1..n {
                if aug[(r, col)].abs() > aug[(pivot, col)].abs() {
                    pivot = r;
                }
            }
            aug.swap_rows(col, pivot);
            let p = aug[(col, col)];
            for j in 0..2 * n {
                aug[(col, j)] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[(r, col)];
                    for j in 0..2 * n {
                        aug[(r, j)] -= f * aug[(col, j)];
                    }
                }
            }
        }
        let mut inv = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                inv[(i, j)] = aug[(i, n + j)];
            }
        }
        inv
    }

    #[test]
    fn input_kernel_unit_at_zero_distance() {
        for l in [1e-3, 0.5, 10.0] {
            assert_eq!(input_kernel(0.37, 0.37, l).unwrap(), 1.0);
        }
    }

    #[test]
    fn input_kernel_flat_limit() {
        let v = input_kernel(0.0, 1.0, 1e6).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn input_kernel_hand_value() {
        let v = input_kernel(0.0, 0.5, 0.5).unwrap();
        assert_abs_diff_eq!(v, 0.6065306597126334, epsilon = 1e-15);
    }

    #[test]
    fn input_kernel_symmetric_bounded() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = rng.random_range(-1.0..2.0);
            let b = rng.random_range(-1.0..2.0);
            let l = rng.random_range(0.01..5.0);
            let kab = input_kernel(a, b, l).unwrap();
            let kba = input_kernel(b, a, l).unwrap();
            assert_eq!(kab, kba);
            assert!(kab > 0.0 && kab <= 1.0);
        }
    }

    #[test]
    fn input_kernel_rejects_bad_lengthscale() {
        assert!(input_kernel(0.0, 1.0, 0.0).is_err());
        assert!(input_kernel(0.0, 1.0, -1.0).is_err());
        assert!(input_kernel(0.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn gram_single_point() {
        let data = Dataset::from_parts(vec![0.3], vec![1.0], vec![0]).unwrap();
        let h = MtgpHyperparams::single_task(0.5, 2.0, 0.1).unwrap();
        let gram = build_gram(&data, &h).unwrap();
        assert_abs_diff_eq!(gram.matrix()[(0, 0)], 2.1, epsilon = 1e-15);
    }

    #[test]
    fn gram_duplicate_input_same_task() {
        let data = Dataset::from_parts(vec![0.4, 0.4], vec![0.0, 0.0], vec![0, 0]).unwrap();
        let h = MtgpHyperparams::single_task(0.5, 1.0, 0.01).unwrap();
        let gram = build_gram(&data, &h).unwrap();
        let expect = [[1.01, 1.0], [1.0, 1.01]];
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(gram.matrix()[(i, j)], expect[i][j], epsilon = 1e-15);
            }
        }
        assert_eq!(gram.jitter(), 0.0);
    }

    #[test]
    fn gram_matches_elementwise_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let data = random_dataset(&mut rng, 5, 2);
        let h = random_hyperparams(&mut rng, 2);
        let gram = build_gram(&data, &h).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut want = h.task_cov(data.tasks()[i], data.tasks()[j])
                    * input_kernel(data.inputs()[i], data.inputs()[j], h.lengthscale()).unwrap();
                if i == j {
                    want += h.noise_vars()[data.tasks()[i]];
                }
                assert!((gram.matrix()[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_rejects_unknown_task() {
        let data = Dataset::from_parts(vec![0.1, 0.2], vec![0.0, 0.0], vec![0, 1]).unwrap();
        let h = MtgpHyperparams::single_task(0.5, 1.0, 0.1).unwrap();
        assert!(matches!(
            build_gram(&data, &h),
            Err(GpError::ParameterDomain(_))
        ));
    }

    #[test]
    fn lml_standard_normal_values() {
        let h = MtgpHyperparams::single_task(1.0, 0.5, 0.5).unwrap();
        let at_zero = Dataset::from_parts(vec![0.0], vec![0.0], vec![0]).unwrap();
        assert_abs_diff_eq!(
            log_marginal_likelihood(&at_zero, &h).unwrap(),
            -0.9189385332046727,
            epsilon = 1e-12
        );
        let at_one = Dataset::from_parts(vec![0.0], vec![1.0], vec![0]).unwrap();
        assert_abs_diff_eq!(
            log_marginal_likelihood(&at_one, &h).unwrap(),
            -1.4189385332046727,
            epsilon = 1e-12
        );
    }

    #[test]
    fn lml_matches_dense_inverse_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let data = random_dataset(&mut rng, 6, 2);
        let h = random_hyperparams(&mut rng, 2);
        let got = log_marginal_likelihood(&data, &h).unwrap();

        let gram = build_gram(&data, &h).unwrap();
        let inv = dense_inverse(gram.matrix());
        let y = DVector::from_column_slice(data.outputs());
        let quad = y.dot(&(&inv * &y));
        let det: f64 = gram.matrix().clone().lu().determinant();
        let want = -0.5 * quad - 0.5 * det.ln() - 0.5 * 6.0 * LN_2PI;
        assert!((got - want).abs() < 1e-8, "got {got}, want {want}");
    }

    #[test]
    fn lml_requires_data() {
        let h = MtgpHyperparams::single_task(1.0, 1.0, 0.1).unwrap();
        assert!(log_marginal_likelihood(&Dataset::empty(1), &h).is_err());
    }

    #[test]
    fn posterior_prior_predictive_on_empty_data() {
        let h = MtgpHyperparams::single_task(0.5, 1.0, 0.1).unwrap();
        let p = posterior(&Dataset::empty(1), &h, 0.5, 0).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_abs_diff_eq!(p.variance, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn posterior_near_interpolation_at_tiny_noise() {
        let data =
            Dataset::from_parts(vec![0.2, 0.5, 0.8], vec![1.0, -0.5, 0.3], vec![0, 0, 0]).unwrap();
        let h = MtgpHyperparams::single_task(0.3, 1.0, 1e-8).unwrap();
        let p = posterior(&data, &h, 0.5, 0).unwrap();
        assert!((p.mean - -0.5).abs() < 1e-3, "mean {}", p.mean);
        assert!(p.variance < 1e-3, "variance {}", p.variance);
    }

    #[test]
    fn posterior_matches_dense_inverse_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let data = random_dataset(&mut rng, 10, 3);
        let h = random_hyperparams(&mut rng, 3);
        let gram = build_gram(&data, &h).unwrap();
        let inv = dense_inverse(gram.matrix());
        let y = DVector::from_column_slice(data.outputs());

        for task in 0..3 {
            let x = rng.random_range(0.0..1.0);
            let got = posterior(&data, &h, x, task).unwrap();
            let mut cross = DVector::zeros(10);
            for i in 0..10 {
                cross[i] = h.task_cov(task, data.tasks()[i])
                    * input_kernel(x, data.inputs()[i], h.lengthscale()).unwrap();
            }
            let want_mean = cross.dot(&(&inv * &y));
            let want_var = h.task_cov(task, task) - cross.dot(&(&inv * &cross));
            assert!((got.mean - want_mean).abs() < 1e-8);
            assert!((got.variance - want_var.max(0.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn posterior_rejects_unknown_task() {
        let data = Dataset::from_parts(vec![0.2], vec![1.0], vec![0]).unwrap();
        let h = MtgpHyperparams::single_task(0.5, 1.0, 0.1).unwrap();
        assert!(matches!(
            posterior(&data, &h, 0.5, 1),
            Err(GpError::ParameterDomain(_))
        ));
    }

    #[test]
    fn posterior_variance_never_exceeds_prior() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for _ in 0..30 {
            let m = rng.random_range(1..4usize);
            let n = rng.random_range(1..25usize);
            let data = random_dataset(&mut rng, n, m);
            let h = random_hyperparams(&mut rng, m);
            let fitted = FittedMtgp::new(data, h.clone()).unwrap();
            for _ in 0..5 {
                let task = rng.random_range(0..m);
                let x = rng.random_range(-0.2..1.2);
                let p = fitted.posterior(x, task).unwrap();
                assert!(p.variance <= h.task_cov(task, task) + 1e-10);
                assert!(p.variance >= 0.0);
            }
        }
    }

    #[test]
    fn infinite_noise_observation_changes_nothing() {
        let data =
            Dataset::from_parts(vec![0.2, 0.6, 0.9], vec![0.5, -0.2, 0.8], vec![0, 1, 0]).unwrap();
        let factor = vec![vec![1.0], vec![0.5, 0.8], vec![0.3, 0.2, 0.9]];
        let h = MtgpHyperparams::new(0.4, factor, vec![0.01, 0.02, 1e12]).unwrap();

        let mut with_obs = data.clone();
        with_obs.ensure_task(2);
        with_obs.push(0.5, 123.4, 2).unwrap();
        let mut base = data;
        base.ensure_task(2);

        for task in 0..2 {
            for x in [0.1, 0.5, 0.95] {
                let a = posterior(&base, &h, x, task).unwrap();
                let b = posterior(&with_obs, &h, x, task).unwrap();
                assert!((a.mean - b.mean).abs() < 1e-6);
                assert!((a.variance - b.variance).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gram_jitter_recovers_singular_duplicates() {
        // Two identical observations with (effectively) no noise make K
        // exactly singular; the factorization must still succeed.
        let data = Dataset::from_parts(vec![0.5, 0.5], vec![1.0, 1.0], vec![0, 0]).unwrap();
        let h = MtgpHyperparams::single_task(0.5, 1.0, 1e-300).unwrap();
        let gram = build_gram(&data, &h).unwrap();
        assert!(gram.jitter() > 0.0);
    }

    #[test]
    fn standardizer_roundtrip_and_identity() {
        let s = Standardizer::fit(&[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(s.mean, 2.5, epsilon = 1e-15);
        for v in [0.0, 1.7, -3.4] {
            assert_abs_diff_eq!(s.invert(s.apply(v)), v, epsilon = 1e-12);
        }
        assert_eq!(Standardizer::fit(&[5.0]), Standardizer::identity());
        // zero spread degenerates to unit scale
        let flat = Standardizer::fit(&[2.0, 2.0, 2.0]);
        assert_eq!(flat.scale, 1.0);
    }

    #[test]
    fn expanded_task_mirrors_predecessor() {
        let h = MtgpHyperparams::new(0.3, vec![vec![1.2]], vec![0.05]).unwrap();
        let e = h.expanded_with_task(0.3, 0.01);
        assert_eq!(e.num_tasks(), 2);
        assert_abs_diff_eq!(e.task_cov(0, 1), 1.44, epsilon = 1e-12);
        let corr = e.task_correlation();
        assert!(corr[0][1] > 0.95);
        assert_abs_diff_eq!(corr[0][0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dataset_csv_format() {
        let rows = vec![DatasetCsvRow {
            trial_index: 0,
            gear_ratio: 49.8,
            raw_score: 1.25,
            normalized_score: 0.5,
            task_index: 1,
            task_label: "s5_v1".into(),
        }];
        let mut buf = Vec::new();
        write_dataset_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "trial_index,gear_ratio,raw_score,normalized_score,task_index,task_label\n0,49.8,1.25,0.5,1,s5_v1\n"
        );
    }
}
