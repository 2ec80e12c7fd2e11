//! Batch entry point: argument parsing, settings loading, dispatch, and
//! artifact persistence. Given the same mode, settings, and seed, every
//! output file is byte-identical across runs.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::bench::{
    build_scenarios, run_replicate_detail, run_scenario, summarize, BenchConfig, BenchError,
    ScenarioReport,
};
use crate::config::{ConfigError, RunSettings, Settings};
use crate::gp::{self, DatasetCsvRow, FitOptions, HyperPrior};
use crate::mtbo::{
    run_sequence, uniform_grid, AcquisitionConfig, LoggingOracle, MtboConfig, MtgpModel, Oracle,
    TaskResult, TaskSpec, TerminationConfig,
};
use crate::seeding::mix;
use crate::sim::{
    ground_truth, participant_presets, BurdenModel, SimError, SimOracle, TaskProfile,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{0}")]
    Run(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Optimize,
    RandomBaseline,
    Scenario,
    GroundTruth,
}

/// A validated invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    /// Explicit `--seed`; falls back to the settings file, then 0.
    pub seed: Option<u64>,
    pub overrides: Vec<(String, String)>,
}

#[derive(Parser)]
#[command(
    name = "gearopt",
    about = "Gear-ratio optimization for a simulated knee energy harvester",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    mode: ModeCmd,
}

#[derive(Subcommand)]
enum ModeCmd {
    /// Optimize the configured task sequence with the multi-task optimizer.
    Optimize(CommonArgs),
    /// Run the random-search baseline on each configured task.
    RandomBaseline(CommonArgs),
    /// Run the full scenario benchmark and emit reports.
    Scenario(CommonArgs),
    /// Emit noiseless score curves and optima for every condition.
    GroundTruth(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` settings file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed; defaults to the settings file's `seed`, then 0.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "results")]
    out: PathBuf,
    /// Override one setting; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Parses an argv sequence into a [`RunConfig`]. Help and usage problems come
/// back as `clap::Error`, which exits 0 for `--help` and nonzero otherwise.
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let (mode, args) = match cli.mode {
        ModeCmd::Optimize(a) => (Mode::Optimize, a),
        ModeCmd::RandomBaseline(a) => (Mode::RandomBaseline, a),
        ModeCmd::Scenario(a) => (Mode::Scenario, a),
        ModeCmd::GroundTruth(a) => (Mode::GroundTruth, a),
    };
    if mode == Mode::Scenario && args.config.is_none() {
        return Err(clap::Error::raw(
            ErrorKind::MissingRequiredArgument,
            "scenario mode requires --config\n",
        ));
    }
    let mut overrides = Vec::new();
    for item in &args.set {
        let Some((key, value)) = item.split_once('=') else {
            return Err(clap::Error::raw(
                ErrorKind::ValueValidation,
                format!("--set expects KEY=VALUE, got `{item}`\n"),
            ));
        };
        overrides.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(RunConfig {
        mode,
        config: args.config,
        out: args.out,
        seed: args.seed,
        overrides,
    })
}

/// Files written by a successful run, in emission order.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub files: Vec<PathBuf>,
}

struct Ctx {
    settings: RunSettings,
    seed: u64,
    out: PathBuf,
    grid: Vec<f64>,
    mtbo: MtboConfig,
    prior: HyperPrior,
}

impl Ctx {
    fn burden_for(&self, participant: &str) -> Result<BurdenModel, CliError> {
        participant_presets()
            .into_iter()
            .find(|(name, _)| name == participant)
            .map(|(_, b)| b)
            .ok_or_else(|| CliError::Run(format!("unknown participant preset `{participant}`")))
    }

    fn profiles(&self, conditions: &[(f64, f64)]) -> Result<Vec<TaskProfile>, CliError> {
        let burden = self.burden_for(&self.settings.participants[0])?;
        conditions
            .iter()
            .map(|&(slope, speed)| {
                TaskProfile::derive(
                    slope,
                    speed,
                    &burden,
                    &self.settings.device,
                    &self.settings.score,
                    self.settings.noise_pct,
                    &self.grid,
                )
                .map_err(CliError::from)
            })
            .collect()
    }
}

fn write_file(path: &Path, contents: &str) -> Result<PathBuf, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    debug_assert!(!contents.is_empty());
    Ok(path.to_path_buf())
}

/// Loads settings, dispatches the mode, and writes every declared artifact.
pub fn execute(cfg: &RunConfig) -> Result<RunArtifacts, CliError> {
    let mut settings = Settings::default();
    if let Some(path) = &cfg.config {
        settings = Settings::parse(&fs::read_to_string(path)?)?;
    }
    for (key, value) in &cfg.overrides {
        settings.set(key, value);
    }
    let settings = RunSettings::from_settings(&settings)?;
    let seed = cfg.seed.unwrap_or(settings.seed);

    if settings.participants.is_empty() {
        return Err(CliError::Run("no participants configured".into()));
    }
    let grid = uniform_grid(
        settings.device.gear_min,
        settings.device.gear_max,
        settings.grid_points.max(2),
    );
    let ctx = Ctx {
        mtbo: MtboConfig {
            acquisition: AcquisitionConfig {
                kappa: settings.kappa,
                grid: grid.clone(),
            },
            termination: TerminationConfig {
                variance_threshold: settings.variance_threshold,
                repeat_count: settings.repeat_count,
                query_cap: settings.query_cap,
            },
            fit: FitOptions {
                restarts: settings.fit_restarts,
                ..FitOptions::default()
            },
        },
        prior: HyperPrior::default(),
        settings,
        seed,
        out: cfg.out.clone(),
        grid,
    };

    let files = match cfg.mode {
        Mode::GroundTruth => ground_truth_mode(&ctx)?,
        Mode::Optimize => optimize_mode(&ctx)?,
        Mode::RandomBaseline => random_baseline_mode(&ctx)?,
        Mode::Scenario => scenario_mode(&ctx)?,
    };
    for f in &files {
        let len = fs::metadata(f)?.len();
        if len == 0 {
            return Err(CliError::Run(format!(
                "wrote empty artifact {}",
                f.display()
            )));
        }
    }
    Ok(RunArtifacts { files })
}

fn curve_csv(points: impl Iterator<Item = (f64, f64)>, header: &str) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for (x, y) in points {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

fn ground_truth_mode(ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    let burden = ctx.burden_for(&ctx.settings.participants[0])?;
    for &slope in &ctx.settings.slopes {
        for &speed in &ctx.settings.speeds {
            let profile = TaskProfile::derive(
                slope,
                speed,
                &burden,
                &ctx.settings.device,
                &ctx.settings.score,
                0.0,
                &ctx.grid,
            )?;
            let truth =
                ground_truth(&profile, &ctx.grid, &ctx.settings.device, &ctx.settings.score)?;
            let csv = curve_csv(
                truth.curve.iter().map(|p| (p.gear_ratio, p.score)),
                "gear_ratio,noiseless_score",
            );
            files.push(write_file(
                &ctx.out
                    .join("curves")
                    .join(format!("ground_truth_{}.csv", profile.label)),
                &csv,
            )?);
        }
    }
    Ok(files)
}

fn make_oracle(ctx: &Ctx, profiles: &[TaskProfile], lane: u64, prefix: &str) -> Box<dyn Oracle> {
    let sim = SimOracle::new(
        profiles.to_vec(),
        ctx.settings.device.clone(),
        ctx.settings.score.clone(),
        mix(ctx.seed, lane),
    );
    if ctx.settings.log_queries {
        Box::new(LoggingOracle::new(sim, prefix.to_string()))
    } else {
        Box::new(sim)
    }
}

fn task_result_files(
    out: &Path,
    stem: &str,
    results: &[TaskResult],
) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for r in results {
        let mut json = serde_json::to_string_pretty(&r.to_json())
            .map_err(|e| CliError::Run(e.to_string()))?;
        json.push('\n');
        files.push(write_file(
            &out.join(format!("{stem}_{}.json", r.task_label)),
            &json,
        )?);
    }
    Ok(files)
}

fn optimize_mode(ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let profiles = ctx.profiles(&ctx.settings.tasks)?;
    let mut oracle = make_oracle(ctx, &profiles, 0, "");
    let mut model = MtgpModel::new(ctx.mtbo.acquisition.input_range(), ctx.prior.clone())
        .map_err(|e| CliError::Run(e.to_string()))?;
    let mut fit_rng = ChaCha12Rng::seed_from_u64(mix(ctx.seed, 1));
    let specs: Vec<TaskSpec> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| TaskSpec {
            index: i,
            label: p.label.clone(),
        })
        .collect();
    let outcome = run_sequence(oracle.as_mut(), &specs, &mut model, &ctx.mtbo, &mut fit_rng)
        .map_err(|e| CliError::Run(e.to_string()))?;

    let mut files = task_result_files(&ctx.out, "task_result", &outcome.tasks)?;

    let standardizer = model.standardizer();
    let rows: Vec<DatasetCsvRow> = model
        .observations()
        .iter()
        .enumerate()
        .map(|(i, o)| DatasetCsvRow {
            trial_index: i,
            gear_ratio: o.gear_ratio,
            raw_score: o.score,
            normalized_score: standardizer.apply(o.score),
            task_index: o.task,
            task_label: profiles[o.task].label.clone(),
        })
        .collect();
    let mut csv = Vec::new();
    gp::write_dataset_csv(&mut csv, &rows)?;
    files.push(write_file(
        &ctx.out.join("dataset.csv"),
        &String::from_utf8(csv).expect("csv is utf-8"),
    )?);

    let mut dump = Vec::new();
    gp::write_hyperparams_dump(&mut dump, model.hyperparams(), &standardizer)?;
    files.push(write_file(
        &ctx.out.join("hyperparams.txt"),
        &String::from_utf8(dump).expect("dump is utf-8"),
    )?);
    Ok(files)
}

fn random_baseline_mode(ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let profiles = ctx.profiles(&ctx.settings.tasks)?;
    let mut results = Vec::new();
    for (t, profile) in profiles.iter().enumerate() {
        let mut oracle = make_oracle(ctx, &profiles, 10 + t as u64, "");
        let mut draw_rng = ChaCha12Rng::seed_from_u64(mix(ctx.seed, 20 + t as u64));
        let mut fit_rng = ChaCha12Rng::seed_from_u64(mix(ctx.seed, 30 + t as u64));
        results.push(
            crate::bench::random_search(
                oracle.as_mut(),
                &ctx.grid,
                t,
                &profile.label,
                &ctx.mtbo.termination,
                &ctx.mtbo.fit,
                &ctx.prior,
                &mut draw_rng,
                &mut fit_rng,
            )
            .map_err(|e| CliError::Run(e.to_string()))?,
        );
    }
    task_result_files(&ctx.out, "random_result", &results)
}

fn scenario_mode(ctx: &Ctx) -> Result<Vec<PathBuf>, CliError> {
    let presets = participant_presets();
    let mut selected = Vec::new();
    for name in &ctx.settings.participants {
        let preset = presets
            .iter()
            .find(|(n, _)| n == name)
            .cloned()
            .ok_or_else(|| CliError::Run(format!("unknown participant preset `{name}`")))?;
        selected.push(preset);
    }
    let scenarios = build_scenarios(
        &selected,
        &ctx.settings.families,
        &ctx.settings.slopes,
        &ctx.settings.speeds,
        ctx.settings.noise_pct,
        ctx.settings.replicates,
        ctx.seed,
        &ctx.settings.device,
        &ctx.settings.score,
        &ctx.grid,
    )?;
    let bench_cfg = BenchConfig {
        consts: ctx.settings.device.clone(),
        score: ctx.settings.score.clone(),
        prior: ctx.prior.clone(),
        mtbo: ctx.mtbo.clone(),
        parallel: ctx.settings.parallel,
        log_queries: ctx.settings.log_queries,
    };

    let mut files = Vec::new();
    let mut reports: Vec<ScenarioReport> = Vec::new();
    for sc in &scenarios {
        reports.push(run_scenario(sc, &bench_cfg)?);

        // curves from the first replicate, re-run without query logging
        let quiet = BenchConfig {
            log_queries: false,
            ..bench_cfg.clone()
        };
        let detail = run_replicate_detail(sc, &quiet, 0)?;
        for (t, profile) in sc.tasks.iter().enumerate() {
            let truth = ground_truth(profile, &ctx.grid, &bench_cfg.consts, &bench_cfg.score)?;
            files.push(write_file(
                &ctx.out
                    .join("curves")
                    .join(format!("ground_truth_{}_{}.csv", sc.id(), profile.label)),
                &curve_csv(
                    truth.curve.iter().map(|p| (p.gear_ratio, p.score)),
                    "gear_ratio,noiseless_score",
                ),
            )?);

            let mut posterior = String::from("gear_ratio,mean,variance\n");
            for p in &detail.mtbo[t].posterior_curve {
                posterior.push_str(&format!("{},{},{}\n", p.gear_ratio, p.mean, p.variance));
            }
            files.push(write_file(
                &ctx.out
                    .join("curves")
                    .join(format!("posterior_{}_{}.csv", sc.id(), profile.label)),
                &posterior,
            )?);

            let random_queries = &detail.random[t].queries;
            let mut best = f64::NEG_INFINITY;
            let best_so_far = random_queries.iter().enumerate().map(|(i, q)| {
                best = best.max(q.raw_score);
                (i as f64, best)
            });
            files.push(write_file(
                &ctx.out
                    .join("curves")
                    .join(format!("bestsofar_random_{}_{}.csv", sc.id(), profile.label)),
                &curve_csv(best_so_far, "query_index,best_raw_score"),
            )?);
        }
    }

    let mut report_json =
        serde_json::to_string_pretty(&reports).map_err(|e| CliError::Run(e.to_string()))?;
    report_json.push('\n');
    files.push(write_file(
        &ctx.out.join("scenario_report.json"),
        &report_json,
    )?);
    let table = summarize(&reports)?;
    files.push(write_file(&ctx.out.join("summary.csv"), &table.to_csv())?);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_scenario_example() {
        let cfg = parse_args([
            "gearopt", "scenario", "--config", "sim.cfg", "--seed", "7", "--out", "results/",
        ])
        .unwrap();
        assert_eq!(cfg.mode, Mode::Scenario);
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.config.as_deref(), Some(Path::new("sim.cfg")));
        assert_eq!(cfg.out, PathBuf::from("results/"));
    }

    #[test]
    fn scenario_requires_config() {
        let err = parse_args(["gearopt", "scenario"]).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::MissingRequiredArgument);
    }

    #[test]
    fn set_overrides_are_split() {
        let cfg = parse_args(["gearopt", "optimize", "--set", "gamma=0"]).unwrap();
        assert_eq!(cfg.overrides, vec![("gamma".to_string(), "0".to_string())]);
        assert!(parse_args(["gearopt", "optimize", "--set", "gamma"]).is_err());
    }

    #[test]
    fn unknown_mode_and_flag_are_rejected() {
        assert!(parse_args(["gearopt", "explode"]).is_err());
        assert!(parse_args(["gearopt", "optimize", "--frobnicate"]).is_err());
    }

    #[test]
    fn help_exits_successfully() {
        let err = parse_args(["gearopt", "--help"]).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::DisplayHelp);
    }

    #[test]
    fn seed_defaults_to_none_for_config_fallback() {
        let cfg = parse_args(["gearopt", "ground-truth"]).unwrap();
        assert_eq!(cfg.seed, None);
        assert_eq!(cfg.out, PathBuf::from("results"));
    }
}
