//! Hyperparameter fitting by penalized marginal likelihood.
//!
//! The search is derivative-free: multi-start coordinate-wise line search in
//! a transformed parameter space (log lengthscale, softplus-raw task-factor
//! diagonal, free off-diagonals, log noise variances), each coordinate
//! box-bounded by the prior. The objective is the log marginal likelihood
//! minus a weak quadratic pull toward the box centers, so accepted steps are
//! non-decreasing in the penalized objective by construction.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::{cholesky_with_jitter, Dataset, GpError, HyperPrior, MtgpHyperparams};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Knobs of the multi-start coordinate search.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Random restarts in addition to the deterministic starts (the prior
    /// center and, when provided, the warm start).
    pub restarts: usize,
    /// Upper bound on coordinate sweeps per start.
    pub max_sweeps: usize,
    /// Initial step per coordinate, as a fraction of its half-width.
    pub initial_step: f64,
    /// Step floor (same units) at which a start is considered converged.
    pub min_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_sweeps: 200,
            initial_step: 0.25,
            min_step: 1e-3,
        }
    }
}

/// Result of a fit: the best parameters found plus the accepted-objective
/// trace of every start (each trace is non-decreasing).
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub hyperparams: MtgpHyperparams,
    pub objective: f64,
    pub traces: Vec<Vec<f64>>,
}

/// Maximizes the penalized marginal likelihood over `restarts` local
/// searches. Deterministic given the generator state. With an empty dataset
/// the prior-center parameters are returned unchanged.
pub fn fit_hyperparameters(
    data: &Dataset,
    prior: &HyperPrior,
    restarts: usize,
    rng: &mut ChaCha12Rng,
) -> Result<MtgpHyperparams, GpError> {
    let opts = FitOptions {
        restarts: restarts.saturating_sub(1),
        ..FitOptions::default()
    };
    fit_with_options(data, prior, &opts, None, rng).map(|o| o.hyperparams)
}

pub fn fit_with_options(
    data: &Dataset,
    prior: &HyperPrior,
    opts: &FitOptions,
    warm_start: Option<&MtgpHyperparams>,
    rng: &mut ChaCha12Rng,
) -> Result<FitOutcome, GpError> {
    prior.validate()?;
    let num_tasks = data.num_tasks();
    if data.is_empty() {
        return Ok(FitOutcome {
            hyperparams: prior.center_hyperparams(num_tasks),
            objective: 0.0,
            traces: Vec::new(),
        });
    }

    let space = ParamSpace::new(prior, num_tasks);
    let eval = Evaluator::new(data, &space);

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm_start {
        if w.num_tasks() != num_tasks {
            return Err(GpError::ParameterDomain(format!(
                "warm start covers {} tasks, dataset needs {}",
                w.num_tasks(),
                num_tasks
            )));
        }
        starts.push(space.encode(w));
    }
    starts.push(space.encode(&prior.center_hyperparams(num_tasks)));
    for _ in 0..opts.restarts {
        starts.push(space.sample(rng));
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut traces = Vec::new();
    for start in starts {
        if let Some((theta, value, trace)) = local_search(&eval, &space, start, opts) {
            traces.push(trace);
            if best.as_ref().is_none_or(|(_, b)| value > *b) {
                best = Some((theta, value));
            }
        }
    }

    let (theta, objective) = best.ok_or_else(|| {
        GpError::NumericalDegeneracy(
            "every fitting start failed to factorize the Gram matrix".into(),
        )
    })?;
    Ok(FitOutcome {
        hyperparams: space.decode(&theta),
        objective,
        traces,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

struct Coord {
    lo: f64,
    hi: f64,
    center: f64,
    half: f64,
}

/// Transformed parameter space: `[ln lengthscale, factor diagonal (softplus
/// raw), factor off-diagonals row-major, ln noise variances]`.
struct ParamSpace {
    num_tasks: usize,
    coords: Vec<Coord>,
    pull_weight: f64,
}

impl ParamSpace {
    fn new(prior: &HyperPrior, num_tasks: usize) -> Self {
        let mut coords = Vec::new();
        let log_coord = |r: &super::LogRange| {
            let (lo, hi) = (r.lo.ln(), r.hi.ln());
            Coord {
                lo,
                hi,
                center: 0.5 * (lo + hi),
                half: 0.5 * (hi - lo),
            }
        };
        coords.push(log_coord(&prior.lengthscale));
        let d_lo = softplus_inv(prior.task_scale.lo);
        let d_hi = softplus_inv(prior.task_scale.hi);
        let d_center = softplus_inv(prior.task_scale.geometric_center());
        for _ in 0..num_tasks {
            coords.push(Coord {
                lo: d_lo,
                hi: d_hi,
                center: d_center,
                half: 0.5 * (d_hi - d_lo),
            });
        }
        let lim = prior.task_offdiag_limit;
        for a in 1..num_tasks {
            for _ in 0..a {
                coords.push(Coord {
                    lo: -lim,
                    hi: lim,
                    center: 0.0,
                    half: lim,
                });
            }
        }
        for _ in 0..num_tasks {
            coords.push(log_coord(&prior.noise));
        }
        Self {
            num_tasks,
            coords,
            pull_weight: prior.pull_weight,
        }
    }

    fn len(&self) -> usize {
        self.coords.len()
    }

    fn clamp(&self, i: usize, v: f64) -> f64 {
        v.clamp(self.coords[i].lo, self.coords[i].hi)
    }

    fn encode(&self, h: &MtgpHyperparams) -> Vec<f64> {
        let m = self.num_tasks;
        let mut theta = Vec::with_capacity(self.len());
        theta.push(h.lengthscale().ln());
        for a in 0..m {
            theta.push(softplus_inv(h.task_factor()[a][a]));
        }
        for a in 1..m {
            for b in 0..a {
                theta.push(h.task_factor()[a][b]);
            }
        }
        for t in 0..m {
            theta.push(h.noise_vars()[t].ln());
        }
        for (i, v) in theta.iter_mut().enumerate() {
            *v = self.clamp(i, *v);
        }
        theta
    }

    fn decode(&self, theta: &[f64]) -> MtgpHyperparams {
        let m = self.num_tasks;
        let lengthscale = theta[0].exp();
        let mut task_factor: Vec<Vec<f64>> = (0..m).map(|a| vec![0.0; a + 1]).collect();
        for (a, row) in task_factor.iter_mut().enumerate() {
            row[a] = softplus(theta[1 + a]);
        }
        let mut idx = 1 + m;
        for a in 1..m {
            for b in 0..a {
                task_factor[a][b] = theta[idx];
                idx += 1;
            }
        }
        let noise_vars = (0..m).map(|t| theta[idx + t].exp()).collect();
        MtgpHyperparams::new(lengthscale, task_factor, noise_vars)
            .expect("box-bounded parameters are always valid")
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> Vec<f64> {
        self.coords
            .iter()
            .map(|c| rng.random_range(c.lo..=c.hi))
            .collect()
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        self.pull_weight
            * theta
                .iter()
                .zip(&self.coords)
                .map(|(v, c)| {
                    let z = (v - c.center) / c.half;
                    z * z
                })
                .sum::<f64>()
    }
}

/// Objective evaluator with a cached input-kernel matrix: moves along
/// task-covariance or noise coordinates reuse the kernel from the previous
/// evaluation, so only lengthscale moves pay for the exponentials.
struct Evaluator<'a> {
    y: DVector<f64>,
    tasks: &'a [usize],
    sqdist: DMatrix<f64>,
    pull_weight_space: &'a ParamSpace,
    kernel_cache: RefCell<Option<(f64, DMatrix<f64>)>>,
}

impl<'a> Evaluator<'a> {
    fn new(data: &'a Dataset, space: &'a ParamSpace) -> Self {
        let n = data.len();
        let xs = data.inputs();
        let mut sqdist = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let d = xs[i] - xs[j];
                sqdist[(i, j)] = d * d;
            }
        }
        Self {
            y: DVector::from_column_slice(data.outputs()),
            tasks: data.tasks(),
            sqdist,
            pull_weight_space: space,
            kernel_cache: RefCell::new(None),
        }
    }

    /// Penalized log marginal likelihood; `None` when the Gram matrix cannot
    /// be factorized even with jitter (the step is simply rejected).
    fn objective(&self, theta: &[f64]) -> Option<f64> {
        let h = self.pull_weight_space.decode(theta);
        let n = self.y.len();

        {
            let mut cache = self.kernel_cache.borrow_mut();
            let stale = match cache.as_ref() {
                Some((l, _)) => *l != h.lengthscale(),
                None => true,
            };
            if stale {
                let inv = -0.5 / (h.lengthscale() * h.lengthscale());
                let kx = self.sqdist.map(|d| (d * inv).exp());
                *cache = Some((h.lengthscale(), kx));
            }
        }
        let cache = self.kernel_cache.borrow();
        let kx = &cache.as_ref().expect("cache populated above").1;

        let task_cov = h.task_cov_matrix();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = task_cov[self.tasks[i]][self.tasks[j]] * kx[(i, j)];
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += h.noise_vars()[self.tasks[i]];
        }

        let (chol, _) = cholesky_with_jitter(&k).ok()?;
        let alpha = chol.solve(&self.y);
        let log_det = chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
            * 2.0;
        let lml = -0.5 * self.y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;
        let value = lml - self.pull_weight_space.penalty(theta);
        value.is_finite().then_some(value)
    }
}

fn local_search(
    eval: &Evaluator,
    space: &ParamSpace,
    mut theta: Vec<f64>,
    opts: &FitOptions,
) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    for (i, v) in theta.iter_mut().enumerate() {
        *v = space.clamp(i, *v);
    }
    let mut value = eval.objective(&theta)?;
    let mut trace = vec![value];

    let n = space.len();
    let mut steps: Vec<f64> = space
        .coords
        .iter()
        .map(|c| opts.initial_step * (c.hi - c.lo) * 0.5)
        .collect();
    let floors: Vec<f64> = space
        .coords
        .iter()
        .map(|c| opts.min_step * (c.hi - c.lo) * 0.5)
        .collect();

    for _ in 0..opts.max_sweeps {
        let mut improved = false;
        for i in 0..n {
            for dir in [1.0, -1.0] {
                let cand = space.clamp(i, theta[i] + dir * steps[i]);
                if cand == theta[i] {
                    continue;
                }
                let prev = theta[i];
                theta[i] = cand;
                match eval.objective(&theta) {
                    Some(v) if v > value => {
                        value = v;
                        trace.push(value);
                        improved = true;
                        // keep walking while the same direction pays off
                        loop {
                            let next = space.clamp(i, theta[i] + dir * steps[i]);
                            if next == theta[i] {
                                break;
                            }
                            let prev_inner = theta[i];
                            theta[i] = next;
                            match eval.objective(&theta) {
                                Some(v2) if v2 > value => {
                                    value = v2;
                                    trace.push(value);
                                }
                                _ => {
                                    theta[i] = prev_inner;
                                    break;
                                }
                            }
                        }
                        break;
                    }
                    _ => theta[i] = prev,
                }
            }
        }
        if !improved {
            for s in steps.iter_mut() {
                *s *= 0.5;
            }
            if steps.iter().zip(&floors).all(|(s, f)| s < f) {
                break;
            }
        }
    }
    Some((theta, value, trace))
}
