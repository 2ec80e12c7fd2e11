//! Scenario benchmark: paired comparisons of the multi-task optimizer against
//! a random-search baseline over seeded replicates, with serializable reports
//! of query counts, chosen gear ratios versus ground truth, and learned task
//! correlations.
//!
//! Replicates are independent (each derives its own generator seeds) and run
//! in parallel when configured; aggregation is an ordered reduction, so
//! reports are identical regardless of scheduling.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gp::{FitOptions, HyperPrior};
use crate::mtbo::{
    check_termination, run_sequence, LoggingOracle, MtboConfig, MtboError, MtgpModel, Oracle,
    PosteriorPoint, QueryRecord, TaskResult, TaskRunError, TaskSpec, TerminationConfig,
    TerminationDecision, TerminationReason,
};
use crate::seeding::mix;
use crate::sim::{
    ground_truth, BurdenModel, DeviceConstants, ScoreConfig, SimError, SimOracle, TaskProfile,
};

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

/// Treadmill minutes one oracle trial stands for when counts are converted
/// into wall-clock terms.
pub const TRIAL_MINUTES: f64 = 2.0;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration: {0}")]
    Configuration(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("replicate {replicate} failed: {message}")]
    Replicate { replicate: usize, message: String },
}

impl From<MtboError> for BenchError {
    fn from(e: MtboError) -> Self {
        BenchError::Configuration(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScenarioFamily {
    #[serde(rename = "multi-slope")]
    MultiSlope,
    #[serde(rename = "multi-speed")]
    MultiSpeed,
}

impl std::fmt::Display for ScenarioFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScenarioFamily::MultiSlope => write!(f, "multi-slope"),
            ScenarioFamily::MultiSpeed => write!(f, "multi-speed"),
        }
    }
}

/// One benchmark group: an ordered task list in which either the slope or the
/// speed varies while the other parameter is held at `fixed_value`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub participant: String,
    pub family: ScenarioFamily,
    pub fixed_value: f64,
    pub tasks: Vec<TaskProfile>,
    pub replicates: usize,
    pub base_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.tasks.is_empty() {
            return Err(BenchError::Configuration("scenario has no tasks".into()));
        }
        if self.replicates == 0 {
            return Err(BenchError::Configuration("zero replicates".into()));
        }
        for (i, a) in self.tasks.iter().enumerate() {
            for b in &self.tasks[..i] {
                if a.slope_deg == b.slope_deg && a.speed_mps == b.speed_mps {
                    return Err(BenchError::Configuration(format!(
                        "duplicate task condition ({}, {})",
                        a.slope_deg, a.speed_mps
                    )));
                }
            }
            let held = match self.family {
                ScenarioFamily::MultiSlope => a.speed_mps,
                ScenarioFamily::MultiSpeed => a.slope_deg,
            };
            if held != self.fixed_value {
                return Err(BenchError::Configuration(format!(
                    "task {} does not hold the fixed parameter at {}",
                    a.label, self.fixed_value
                )));
            }
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!("{}_{}_{}", self.participant, self.family, self.fixed_value)
    }
}

/// Shared run configuration for both arms of every scenario.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub consts: DeviceConstants,
    pub score: ScoreConfig,
    pub prior: HyperPrior,
    pub mtbo: MtboConfig,
    pub parallel: bool,
    /// Print one audit line per oracle query.
    pub log_queries: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            consts: DeviceConstants::default(),
            score: ScoreConfig::default(),
            prior: HyperPrior::default(),
            mtbo: MtboConfig::loop_default(),
            parallel: true,
            log_queries: false,
        }
    }
}

/// Uniform draws over the grid with replacement, stopped under the same rules
/// as the optimizer applied to a single-task model fit on the samples. The
/// chosen ratio is the best single observation, ties to the earliest.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    oracle: &mut dyn Oracle,
    grid: &[f64],
    task_index: usize,
    label: &str,
    term: &TerminationConfig,
    fit: &FitOptions,
    prior: &HyperPrior,
    draw_rng: &mut ChaCha12Rng,
    fit_rng: &mut ChaCha12Rng,
) -> Result<TaskResult, TaskRunError> {
    if grid.is_empty() {
        return Err(MtboError::Configuration("empty grid".into()).into());
    }
    term.validate()?;
    let lo = grid[0];
    let hi = grid[grid.len() - 1];
    let range = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let mut model = MtgpModel::new(range, prior.clone())?;
    model.ensure_task(0)?;

    let mut history: Vec<(f64, f64)> = Vec::new();
    let reason = loop {
        model.refit_if_dirty(fit, fit_rng)?;
        let gears: Vec<f64> = history.iter().map(|h| h.0).collect();
        if let TerminationDecision::Stop(reason) = check_termination(&model, 0, &gears, grid, term)?
        {
            break reason;
        }
        let gear = grid[draw_rng.random_range(0..grid.len())];
        let y = oracle
            .evaluate(gear, task_index)
            .map_err(|source| TaskRunError::Oracle {
                source,
                partial: history
                    .iter()
                    .map(|&(g, s)| QueryRecord {
                        gear_ratio: g,
                        raw_score: s,
                        normalized_score: model.standardizer().apply(s),
                    })
                    .collect(),
            })?;
        model.observe(gear, y, 0)?;
        history.push((gear, y));
    };

    let mut best = 0usize;
    for (i, h) in history.iter().enumerate() {
        if h.1 > history[best].1 {
            best = i;
        }
    }
    let curve = model.posterior_curve(grid, 0)?;
    let standardizer = model.standardizer();
    Ok(TaskResult {
        task: task_index,
        task_label: label.to_string(),
        chosen_gear_ratio: history[best].0,
        termination: reason,
        queries: history
            .iter()
            .map(|&(gear_ratio, raw_score)| QueryRecord {
                gear_ratio,
                raw_score,
                normalized_score: standardizer.apply(raw_score),
            })
            .collect(),
        posterior_curve: grid
            .iter()
            .zip(&curve)
            .map(|(&gear_ratio, p)| PosteriorPoint {
                gear_ratio,
                mean: p.mean,
                variance: p.variance,
            })
            .collect(),
        task_correlation: vec![vec![1.0]],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskOutcome {
    pub label: String,
    pub queries: usize,
    pub chosen: f64,
    pub hit: bool,
    pub termination: TerminationReason,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateOutcome {
    pub seed: u64,
    pub mtbo: Vec<TaskOutcome>,
    pub random: Vec<TaskOutcome>,
    pub task_correlation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TerminationTally {
    pub variance: usize,
    pub repeat: usize,
    pub cap: usize,
}

impl TerminationTally {
    fn add(&mut self, reason: TerminationReason) {
        match reason {
            TerminationReason::Variance => self.variance += 1,
            TerminationReason::Repeat => self.repeat += 1,
            TerminationReason::Cap => self.cap += 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmAggregate {
    pub median_queries: f64,
    pub median_chosen: f64,
    pub hits: usize,
    pub hit_rate: f64,
    pub termination: TerminationTally,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskComparison {
    pub label: String,
    pub ground_truth_gear: f64,
    pub analytic_optimum: Option<f64>,
    pub mtbo: ArmAggregate,
    pub random: ArmAggregate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub mtbo_total_median: f64,
    pub random_total_median: f64,
    /// `(1 - mtbo/random) * 100`.
    pub reduction_pct: f64,
    pub mtbo_minutes_equivalent: f64,
    pub random_minutes_equivalent: f64,
    pub mtbo_hit_cells: usize,
    pub total_cells: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub participant: String,
    pub family: ScenarioFamily,
    pub fixed_value: f64,
    pub task_labels: Vec<String>,
    pub replicates: usize,
    pub base_seed: u64,
    pub tasks: Vec<TaskComparison>,
    /// Elementwise median over replicates of the final learned correlations.
    pub task_correlation_median: Vec<Vec<f64>>,
    pub replicate_outcomes: Vec<ReplicateOutcome>,
    pub summary: ScenarioSummary,
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

// Replicate-lane offsets for seed derivation; the optimizer arm and each
// random-search task get decorrelated streams.
const LANE_MTBO_ORACLE: u64 = 0;
const LANE_MTBO_FIT: u64 = 1;
const LANE_RANDOM_ORACLE: u64 = 100;
const LANE_RANDOM_DRAW: u64 = 200;
const LANE_RANDOM_FIT: u64 = 300;

/// Both arms of one replicate, in full detail.
pub struct ReplicateDetail {
    pub seed: u64,
    pub mtbo: Vec<TaskResult>,
    pub random: Vec<TaskResult>,
    pub task_correlation: Vec<Vec<f64>>,
}

/// Runs one replicate of a scenario: the task sequence under the multi-task
/// optimizer, then an independent random search per task. Deterministic given
/// the scenario seed and replicate index.
pub fn run_replicate_detail(
    sc: &Scenario,
    cfg: &BenchConfig,
    replicate: usize,
) -> Result<ReplicateDetail, BenchError> {
    let fail = |e: TaskRunError| BenchError::Replicate {
        replicate,
        message: e.to_string(),
    };
    let rep_seed = mix(sc.base_seed, replicate as u64);
    let grid = &cfg.mtbo.acquisition.grid;

    let wrap = |sim: SimOracle, arm: &str| -> Box<dyn Oracle> {
        if cfg.log_queries {
            Box::new(LoggingOracle::new(
                sim,
                format!("{} rep={replicate} arm={arm} ", sc.id()),
            ))
        } else {
            Box::new(sim)
        }
    };
    let mut oracle = wrap(
        SimOracle::new(
            sc.tasks.clone(),
            cfg.consts.clone(),
            cfg.score.clone(),
            mix(rep_seed, LANE_MTBO_ORACLE),
        ),
        "mtbo",
    );
    let mut fit_rng = ChaCha12Rng::seed_from_u64(mix(rep_seed, LANE_MTBO_FIT));
    let mut model = MtgpModel::new(cfg.mtbo.acquisition.input_range(), cfg.prior.clone())?;
    let specs: Vec<TaskSpec> = sc
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| TaskSpec {
            index: i,
            label: t.label.clone(),
        })
        .collect();
    let sequence =
        run_sequence(oracle.as_mut(), &specs, &mut model, &cfg.mtbo, &mut fit_rng).map_err(fail)?;

    let mut random = Vec::with_capacity(sc.tasks.len());
    for (t, profile) in sc.tasks.iter().enumerate() {
        let mut oracle_r = wrap(
            SimOracle::new(
                sc.tasks.clone(),
                cfg.consts.clone(),
                cfg.score.clone(),
                mix(rep_seed, LANE_RANDOM_ORACLE + t as u64),
            ),
            "random",
        );
        let mut draw_rng = ChaCha12Rng::seed_from_u64(mix(rep_seed, LANE_RANDOM_DRAW + t as u64));
        let mut fit_rng_r = ChaCha12Rng::seed_from_u64(mix(rep_seed, LANE_RANDOM_FIT + t as u64));
        random.push(
            random_search(
                oracle_r.as_mut(),
                grid,
                t,
                &profile.label,
                &cfg.mtbo.termination,
                &cfg.mtbo.fit,
                &cfg.prior,
                &mut draw_rng,
                &mut fit_rng_r,
            )
            .map_err(fail)?,
        );
    }

    Ok(ReplicateDetail {
        seed: rep_seed,
        mtbo: sequence.tasks,
        random,
        task_correlation: sequence.task_correlation,
    })
}

/// Runs every replicate of a scenario and aggregates medians, hit rates, and
/// learned correlations. Bit-reproducible given the scenario's base seed.
pub fn run_scenario(sc: &Scenario, cfg: &BenchConfig) -> Result<ScenarioReport, BenchError> {
    sc.validate()?;
    cfg.mtbo.validate()?;
    let grid = &cfg.mtbo.acquisition.grid;
    let step = cfg.mtbo.acquisition.grid_step();

    let truths: Vec<_> = sc
        .tasks
        .iter()
        .map(|t| ground_truth(t, grid, &cfg.consts, &cfg.score))
        .collect::<Result<_, _>>()?;

    let to_outcome = |r: &TaskResult, truth_gear: f64| TaskOutcome {
        label: r.task_label.clone(),
        queries: r.queries_used(),
        chosen: r.chosen_gear_ratio,
        hit: (r.chosen_gear_ratio - truth_gear).abs() <= step + 1e-9,
        termination: r.termination,
    };
    let run_one = |rep: usize| -> Result<ReplicateOutcome, BenchError> {
        let detail = run_replicate_detail(sc, cfg, rep)?;
        Ok(ReplicateOutcome {
            seed: detail.seed,
            mtbo: detail
                .mtbo
                .iter()
                .zip(&truths)
                .map(|(r, t)| to_outcome(r, t.optimum_gear_ratio))
                .collect(),
            random: detail
                .random
                .iter()
                .zip(&truths)
                .map(|(r, t)| to_outcome(r, t.optimum_gear_ratio))
                .collect(),
            task_correlation: detail.task_correlation,
        })
    };

    let replicate_outcomes: Vec<ReplicateOutcome> = if cfg.parallel {
        (0..sc.replicates)
            .into_par_iter()
            .map(run_one)
            .collect::<Result<_, _>>()?
    } else {
        (0..sc.replicates).map(run_one).collect::<Result<_, _>>()?
    };

    let n_tasks = sc.tasks.len();
    let aggregate =
        |pick: &dyn Fn(&ReplicateOutcome) -> &Vec<TaskOutcome>, task: usize| -> ArmAggregate {
            let mut tally = TerminationTally::default();
            let mut hits = 0usize;
            for rep in &replicate_outcomes {
                let o = &pick(rep)[task];
                tally.add(o.termination);
                if o.hit {
                    hits += 1;
                }
            }
            ArmAggregate {
                median_queries: median(
                    replicate_outcomes
                        .iter()
                        .map(|r| pick(r)[task].queries as f64)
                        .collect(),
                ),
                median_chosen: median(
                    replicate_outcomes
                        .iter()
                        .map(|r| pick(r)[task].chosen)
                        .collect(),
                ),
                hits,
                hit_rate: hits as f64 / replicate_outcomes.len() as f64,
                termination: tally,
            }
        };

    let tasks: Vec<TaskComparison> = (0..n_tasks)
        .map(|t| TaskComparison {
            label: sc.tasks[t].label.clone(),
            ground_truth_gear: truths[t].optimum_gear_ratio,
            analytic_optimum: truths[t].analytic_optimum,
            mtbo: aggregate(&|r| &r.mtbo, t),
            random: aggregate(&|r| &r.random, t),
        })
        .collect();

    let task_correlation_median: Vec<Vec<f64>> = (0..n_tasks)
        .map(|a| {
            (0..n_tasks)
                .map(|b| {
                    median(
                        replicate_outcomes
                            .iter()
                            .map(|r| r.task_correlation[a][b])
                            .collect(),
                    )
                })
                .collect()
        })
        .collect();

    let totals = |pick: &dyn Fn(&ReplicateOutcome) -> &Vec<TaskOutcome>| -> Vec<f64> {
        replicate_outcomes
            .iter()
            .map(|r| pick(r).iter().map(|o| o.queries as f64).sum())
            .collect()
    };
    let mtbo_total_median = median(totals(&|r| &r.mtbo));
    let random_total_median = median(totals(&|r| &r.random));
    let mtbo_hit_cells: usize = tasks.iter().map(|t| t.mtbo.hits).sum();
    let total_cells = n_tasks * replicate_outcomes.len();
    let reduction_pct = if random_total_median > 0.0 {
        (1.0 - mtbo_total_median / random_total_median) * 100.0
    } else {
        0.0
    };

    Ok(ScenarioReport {
        participant: sc.participant.clone(),
        family: sc.family,
        fixed_value: sc.fixed_value,
        task_labels: sc.tasks.iter().map(|t| t.label.clone()).collect(),
        replicates: sc.replicates,
        base_seed: sc.base_seed,
        tasks,
        task_correlation_median,
        replicate_outcomes,
        summary: ScenarioSummary {
            mtbo_total_median,
            random_total_median,
            reduction_pct,
            mtbo_minutes_equivalent: mtbo_total_median * TRIAL_MINUTES,
            random_minutes_equivalent: random_total_median * TRIAL_MINUTES,
            mtbo_hit_cells,
            total_cells,
        },
    })
}

/// Builds the scenario grid: every participant preset crossed with both
/// families, one scenario per held parameter value. Scenario seeds derive
/// from `base_seed` by position.
#[allow(clippy::too_many_arguments)]
pub fn build_scenarios(
    participants: &[(String, BurdenModel)],
    families: &[ScenarioFamily],
    slopes: &[f64],
    speeds: &[f64],
    noise_pct: f64,
    replicates: usize,
    base_seed: u64,
    consts: &DeviceConstants,
    score: &ScoreConfig,
    grid: &[f64],
) -> Result<Vec<Scenario>, SimError> {
    let mut scenarios = Vec::new();
    let mut counter = 0u64;
    for (name, burden) in participants {
        for family in families {
            let held: &[f64] = match family {
                ScenarioFamily::MultiSlope => speeds,
                ScenarioFamily::MultiSpeed => slopes,
            };
            for &fixed in held {
                let tasks: Vec<TaskProfile> = match family {
                    ScenarioFamily::MultiSlope => slopes
                        .iter()
                        .map(|&s| {
                            TaskProfile::derive(s, fixed, burden, consts, score, noise_pct, grid)
                        })
                        .collect::<Result<_, _>>()?,
                    ScenarioFamily::MultiSpeed => speeds
                        .iter()
                        .map(|&v| {
                            TaskProfile::derive(fixed, v, burden, consts, score, noise_pct, grid)
                        })
                        .collect::<Result<_, _>>()?,
                };
                scenarios.push(Scenario {
                    participant: name.clone(),
                    family: *family,
                    fixed_value: fixed,
                    tasks,
                    replicates,
                    base_seed: mix(base_seed, counter),
                });
                counter += 1;
            }
        }
    }
    Ok(scenarios)
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub participant: String,
    pub family: ScenarioFamily,
    pub fixed_value: f64,
    pub mtbo_median_total: f64,
    pub random_median_total: f64,
    pub reduction_pct: f64,
    pub mtbo_minutes: f64,
    pub random_minutes: f64,
    pub hit_cells: usize,
    pub total_cells: usize,
    pub hit_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "participant,family,fixed_value,mtbo_median_total,random_median_total,reduction_pct,mtbo_minutes,random_minutes,hit_cells,total_cells,hit_rate\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.participant,
                r.family,
                r.fixed_value,
                r.mtbo_median_total,
                r.random_median_total,
                r.reduction_pct,
                r.mtbo_minutes,
                r.random_minutes,
                r.hit_cells,
                r.total_cells,
                r.hit_rate
            ));
        }
        out
    }
}

/// Cross-scenario table with counts translated into trial minutes.
pub fn summarize(reports: &[ScenarioReport]) -> Result<SummaryTable, BenchError> {
    if reports.is_empty() {
        return Err(BenchError::Configuration("no reports to summarize".into()));
    }
    Ok(SummaryTable {
        rows: reports
            .iter()
            .map(|r| SummaryRow {
                participant: r.participant.clone(),
                family: r.family,
                fixed_value: r.fixed_value,
                mtbo_median_total: r.summary.mtbo_total_median,
                random_median_total: r.summary.random_total_median,
                reduction_pct: r.summary.reduction_pct,
                mtbo_minutes: r.summary.mtbo_minutes_equivalent,
                random_minutes: r.summary.random_minutes_equivalent,
                hit_cells: r.summary.mtbo_hit_cells,
                total_cells: r.summary.total_cells,
                hit_rate: r.summary.mtbo_hit_cells as f64 / r.summary.total_cells.max(1) as f64,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtbo::OracleError;
    use crate::sim::participant_presets;
    use rand_distr::StandardNormal;

    fn noisy_oracle(seed: u64) -> impl FnMut(f64, usize) -> Result<f64, OracleError> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        move |x, _| Ok(1.0 - (x - 0.4) * (x - 0.4) + 0.2 * rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn random_search_single_point_grid_repeats_three_times() {
        let mut oracle = noisy_oracle(7);
        let res = random_search(
            &mut oracle,
            &[0.5],
            0,
            "one",
            &TerminationConfig::default(),
            &FitOptions::default(),
            &HyperPrior::default(),
            &mut ChaCha12Rng::seed_from_u64(1),
            &mut ChaCha12Rng::seed_from_u64(2),
        )
        .unwrap();
        assert_eq!(res.queries_used(), 3);
        assert_eq!(res.termination, TerminationReason::Repeat);
    }

    #[test]
    fn random_search_is_deterministic() {
        let grid = crate::mtbo::uniform_grid(0.0, 1.0, 11);
        let run = || {
            let mut oracle = noisy_oracle(3);
            random_search(
                &mut oracle,
                &grid,
                0,
                "t",
                &TerminationConfig::default(),
                &FitOptions::default(),
                &HyperPrior::default(),
                &mut ChaCha12Rng::seed_from_u64(11),
                &mut ChaCha12Rng::seed_from_u64(12),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        let ga: Vec<f64> = a.queries.iter().map(|q| q.gear_ratio).collect();
        let gb: Vec<f64> = b.queries.iter().map(|q| q.gear_ratio).collect();
        assert_eq!(ga, gb);
        assert_eq!(a.chosen_gear_ratio, b.chosen_gear_ratio);
    }

    #[test]
    fn scenario_validation_rejects_mixed_families() {
        let consts = DeviceConstants::default();
        let score = ScoreConfig::default();
        let grid = crate::mtbo::uniform_grid(16.0, 144.0, 50);
        let burden = BurdenModel::default();
        let t1 = TaskProfile::derive(0.0, 1.0, &burden, &consts, &score, 0.0, &grid).unwrap();
        let t2 = TaskProfile::derive(5.0, 1.5, &burden, &consts, &score, 0.0, &grid).unwrap();
        let sc = Scenario {
            participant: "p1".into(),
            family: ScenarioFamily::MultiSlope,
            fixed_value: 1.0,
            tasks: vec![t1, t2],
            replicates: 1,
            base_seed: 0,
        };
        assert!(matches!(sc.validate(), Err(BenchError::Configuration(_))));
    }

    fn tiny_scenario() -> (Scenario, BenchConfig) {
        let consts = DeviceConstants::default();
        // short trials keep the test quick; the landscape shape is unchanged
        let score = ScoreConfig {
            trial_window_s: 2.0,
            sample_dt_s: 0.005,
            ..ScoreConfig::default()
        };
        let grid = crate::mtbo::uniform_grid(16.0, 144.0, 50);
        let burden = BurdenModel::default();
        let tasks = vec![
            TaskProfile::derive(0.0, 1.0, &burden, &consts, &score, 0.03, &grid).unwrap(),
            TaskProfile::derive(5.0, 1.0, &burden, &consts, &score, 0.03, &grid).unwrap(),
        ];
        let sc = Scenario {
            participant: "p1".into(),
            family: ScenarioFamily::MultiSlope,
            fixed_value: 1.0,
            tasks,
            replicates: 2,
            base_seed: 42,
        };
        let cfg = BenchConfig {
            score,
            parallel: false,
            ..BenchConfig::default()
        };
        (sc, cfg)
    }

    #[test]
    fn scenario_report_is_reproducible_and_consistent() {
        let (sc, cfg) = tiny_scenario();
        let a = run_scenario(&sc, &cfg).unwrap();
        let b = run_scenario(&sc, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );

        // hit flags recomputable from chosen/truth
        let step = cfg.mtbo.acquisition.grid_step();
        for rep in &a.replicate_outcomes {
            for (t, o) in rep.mtbo.iter().enumerate() {
                let truth = a.tasks[t].ground_truth_gear;
                assert_eq!(o.hit, (o.chosen - truth).abs() <= step + 1e-9);
            }
        }
        // correlation matrices symmetric, unit diagonal, entries in [-1, 1]
        for rep in &a.replicate_outcomes {
            let m = &rep.task_correlation;
            for i in 0..m.len() {
                assert!((m[i][i] - 1.0).abs() < 1e-12);
                for j in 0..m.len() {
                    assert!((m[i][j] - m[j][i]).abs() < 1e-12);
                    assert!(m[i][j] >= -1.0 - 1e-12 && m[i][j] <= 1.0 + 1e-12);
                }
            }
        }
        // paired fairness: both arms share the query cap
        for rep in &a.replicate_outcomes {
            for o in rep.mtbo.iter().chain(rep.random.iter()) {
                assert!(o.queries <= cfg.mtbo.termination.query_cap);
            }
        }
    }

    #[test]
    fn parallel_and_serial_reports_agree() {
        let (sc, mut cfg) = tiny_scenario();
        cfg.parallel = false;
        let serial = run_scenario(&sc, &cfg).unwrap();
        cfg.parallel = true;
        let parallel = run_scenario(&sc, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&serial).unwrap(),
            serde_json::to_string(&parallel).unwrap()
        );
    }

    #[test]
    fn build_scenarios_covers_the_full_grid() {
        let consts = DeviceConstants::default();
        let score = ScoreConfig::default();
        let grid = crate::mtbo::uniform_grid(16.0, 144.0, 50);
        let scenarios = build_scenarios(
            &participant_presets(),
            &[ScenarioFamily::MultiSlope, ScenarioFamily::MultiSpeed],
            &[0.0, 5.0, 10.0],
            &[1.0, 1.5, 2.0],
            0.03,
            20,
            0,
            &consts,
            &score,
            &grid,
        )
        .unwrap();
        assert_eq!(scenarios.len(), 12);
        for sc in &scenarios {
            sc.validate().unwrap();
            assert_eq!(sc.tasks.len(), 3);
        }
        // distinct seeds per scenario
        let mut seeds: Vec<u64> = scenarios.iter().map(|s| s.base_seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 12);
    }

    #[test]
    fn summary_arithmetic() {
        let (sc, cfg) = tiny_scenario();
        let mut report = run_scenario(&sc, &cfg).unwrap();
        let table = summarize(std::slice::from_ref(&report)).unwrap();
        assert_eq!(table.rows.len(), 1);
        let row = &table.rows[0];
        let want = (1.0 - row.mtbo_median_total / row.random_median_total) * 100.0;
        assert!((row.reduction_pct - want).abs() < 1e-12);
        assert_eq!(row.mtbo_minutes, row.mtbo_median_total * TRIAL_MINUTES);

        // identical medians give zero reduction
        report.summary.random_total_median = report.summary.mtbo_total_median;
        report.summary.reduction_pct = (1.0
            - report.summary.mtbo_total_median / report.summary.random_total_median)
            * 100.0;
        assert_eq!(report.summary.reduction_pct, 0.0);

        // 12 vs 36 trial-minutes reduces by two thirds
        report.summary.mtbo_total_median = 6.0;
        report.summary.random_total_median = 18.0;
        report.summary.reduction_pct =
            (1.0 - report.summary.mtbo_total_median / report.summary.random_total_median) * 100.0;
        report.summary.mtbo_minutes_equivalent = 12.0;
        report.summary.random_minutes_equivalent = 36.0;
        let t2 = summarize(&[report]).unwrap();
        assert!((t2.rows[0].reduction_pct - 66.666_666_666_666_66).abs() < 1e-9);

        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn summary_csv_has_one_row_per_scenario() {
        let (sc, cfg) = tiny_scenario();
        let report = run_scenario(&sc, &cfg).unwrap();
        let table = summarize(&[report]).unwrap();
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("participant,family,"));
        assert!(csv.contains("multi-slope"));
    }
}
