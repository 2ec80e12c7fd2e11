//! Simulated participant-plus-device oracle.
//!
//! A raised-cosine knee trajectory stands in for measured gait; generator
//! physics convert knee motion into generated power and reaction torque; a
//! threshold rule gates harvesting to the braking part of the swing; and a
//! polynomial effort surrogate replaces muscle-activity sensing. The per-trial
//! score is mean power minus weighted effort plus Gaussian noise, so the
//! noiseless landscape and its optimum are computable in closed form per task.

use std::f64::consts::PI;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::mtbo::{Oracle, OracleError};
use crate::seeding;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),
}

/// Harvesting is allowed below this knee angle (with negative velocity).
pub const HARVEST_ANGLE_LIMIT_RAD: f64 = 15.0 * PI / 180.0;

/// Generator and transmission constants.
#[derive(Debug, Clone, Serialize)]
pub struct DeviceConstants {
    /// Torque constant, N·m/A.
    pub torque_constant: f64,
    /// Circuit internal resistance, Ω.
    pub resistance: f64,
    pub gear_min: f64,
    pub gear_max: f64,
    /// Movable knee range, rad.
    pub knee_range: (f64, f64),
    /// Whether the circuit connects during harvest windows (binary duty).
    pub duty_connected: bool,
    /// Device mass, kg; reporting only.
    pub mass_kg: f64,
}

impl Default for DeviceConstants {
    fn default() -> Self {
        Self {
            torque_constant: 70.6e-3,
            resistance: 1.4,
            gear_min: 16.0,
            gear_max: 144.0,
            knee_range: (0.0, PI / 2.0),
            duty_connected: true,
            mass_kg: 0.78,
        }
    }
}

impl DeviceConstants {
    fn check_gear(&self, gear_ratio: f64) -> Result<(), SimError> {
        if !(gear_ratio >= self.gear_min && gear_ratio <= self.gear_max) {
            return Err(SimError::ParameterDomain(format!(
                "gear ratio {gear_ratio} outside [{}, {}]",
                self.gear_min, self.gear_max
            )));
        }
        Ok(())
    }
}

/// Effort-surrogate coefficients for one task: `e0 + e1·τ + e2·τ²`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BurdenCoeffs {
    pub intercept: f64,
    pub linear: f64,
    pub quadratic: f64,
}

/// How burden coefficients scale with slope angle and gait speed. Steeper
/// slopes raise every coefficient, pulling the score optimum down; faster
/// gait dilutes the torque-dependent ones, pushing it up. The defaults place
/// every optimum well inside the gear range with the surrounding hump
/// spanning most of the grid, so the landscapes of neighboring conditions
/// stay strongly correlated.
#[derive(Debug, Clone, Serialize)]
pub struct BurdenModel {
    pub intercept_base: f64,
    pub intercept_slope_gain: f64,
    pub linear_base: f64,
    pub linear_slope_gain: f64,
    pub quadratic_base: f64,
    pub quadratic_slope_gain: f64,
    /// Speed exponent of the quadratic coefficient.
    pub quadratic_speed_exponent: f64,
}

impl Default for BurdenModel {
    fn default() -> Self {
        Self {
            intercept_base: 0.5,
            intercept_slope_gain: 0.05,
            linear_base: 0.002,
            linear_slope_gain: 0.1,
            quadratic_base: 0.0036,
            quadratic_slope_gain: 0.025,
            quadratic_speed_exponent: 0.35,
        }
    }
}

impl BurdenModel {
    pub fn coefficients(&self, slope_deg: f64, speed_mps: f64) -> BurdenCoeffs {
        BurdenCoeffs {
            intercept: self.intercept_base + self.intercept_slope_gain * slope_deg,
            linear: self.linear_base * (1.0 + self.linear_slope_gain * slope_deg) / speed_mps,
            quadratic: self.quadratic_base * (1.0 + self.quadratic_slope_gain * slope_deg)
                / speed_mps.powf(self.quadratic_speed_exponent),
        }
    }
}

/// Two simulated participant presets with distinct burden responses.
pub fn participant_presets() -> Vec<(String, BurdenModel)> {
    vec![
        ("p1".to_string(), BurdenModel::default()),
        (
            "p2".to_string(),
            BurdenModel {
                intercept_base: 0.6,
                intercept_slope_gain: 0.04,
                linear_base: 0.0024,
                linear_slope_gain: 0.08,
                quadratic_base: 0.0040,
                quadratic_slope_gain: 0.035,
                quadratic_speed_exponent: 0.35,
            },
        ),
    ]
}

/// Score mixing and trial timing.
#[derive(Debug, Clone, Serialize)]
pub struct ScoreConfig {
    /// Weight of the effort surrogate against generated power.
    pub burden_weight: f64,
    /// Scored portion of a trial, seconds.
    pub trial_window_s: f64,
    /// Gait sampling step, seconds.
    pub sample_dt_s: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            burden_weight: 5.0,
            trial_window_s: 10.0,
            sample_dt_s: 0.002,
        }
    }
}

/// One (slope, speed) condition and the gait/burden/noise parameters it
/// induces.
#[derive(Debug, Clone, Serialize)]
pub struct TaskProfile {
    pub label: String,
    pub slope_deg: f64,
    pub speed_mps: f64,
    pub stride_hz: f64,
    pub swing_amplitude_rad: f64,
    pub burden: BurdenCoeffs,
    /// Additive score noise, raw units.
    pub noise_std: f64,
}

const WALK_AMPLITUDE_DEG: f64 = 70.0;
const JOG_AMPLITUDE_DEG: f64 = 75.0;
const STRIDE_HZ_PER_MPS: f64 = 0.9;

impl TaskProfile {
    /// Builds the profile for a (slope, speed) condition. The noise scale is
    /// `noise_pct` of the noiseless score range over `grid`.
    pub fn derive(
        slope_deg: f64,
        speed_mps: f64,
        burden_model: &BurdenModel,
        consts: &DeviceConstants,
        score: &ScoreConfig,
        noise_pct: f64,
        grid: &[f64],
    ) -> Result<Self, SimError> {
        if !(speed_mps > 0.0) {
            return Err(SimError::ParameterDomain(format!(
                "gait speed must be positive, got {speed_mps}"
            )));
        }
        if noise_pct < 0.0 {
            return Err(SimError::ParameterDomain(format!(
                "noise percentage must be non-negative, got {noise_pct}"
            )));
        }
        let amplitude_deg = if speed_mps <= 1.5 {
            WALK_AMPLITUDE_DEG
        } else {
            JOG_AMPLITUDE_DEG
        };
        let swing_amplitude_rad = amplitude_deg * PI / 180.0;
        if swing_amplitude_rad > consts.knee_range.1 {
            return Err(SimError::ParameterDomain(format!(
                "swing amplitude {swing_amplitude_rad} rad exceeds knee range"
            )));
        }
        let mut profile = Self {
            label: format!("s{slope_deg}_v{speed_mps}"),
            slope_deg,
            speed_mps,
            stride_hz: STRIDE_HZ_PER_MPS * speed_mps,
            swing_amplitude_rad,
            burden: burden_model.coefficients(slope_deg, speed_mps),
            noise_std: 0.0,
        };
        if noise_pct > 0.0 && !grid.is_empty() {
            let truth = ground_truth(&profile, grid, consts, score)?;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in &truth.curve {
                lo = lo.min(p.score);
                hi = hi.max(p.score);
            }
            profile.noise_std = noise_pct * (hi - lo);
        }
        Ok(profile)
    }
}

/// One sample of the synthetic knee trajectory.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GaitSample {
    pub time_s: f64,
    pub knee_angle_rad: f64,
    pub knee_velocity_rad_s: f64,
    pub harvesting: bool,
}

/// True iff the knee is below the harvest angle and still flexing back.
pub fn harvest_window(knee_angle_rad: f64, knee_velocity_rad_s: f64) -> bool {
    knee_angle_rad < HARVEST_ANGLE_LIMIT_RAD && knee_velocity_rad_s < 0.0
}

/// Rectified back-EMF and circuit current at one instant.
pub fn electrical_state(
    gear_ratio: f64,
    duty: bool,
    knee_velocity_rad_s: f64,
    c: &DeviceConstants,
) -> Result<(f64, f64), SimError> {
    c.check_gear(gear_ratio)?;
    let volts = c.torque_constant * gear_ratio * knee_velocity_rad_s.abs();
    let amps = if duty { volts / c.resistance } else { 0.0 };
    Ok((volts, amps))
}

/// Generated power `(K_T·G·θ̇)²/R` while connected, zero otherwise.
pub fn instantaneous_power(
    gear_ratio: f64,
    duty: bool,
    knee_velocity_rad_s: f64,
    c: &DeviceConstants,
) -> Result<f64, SimError> {
    c.check_gear(gear_ratio)?;
    if !duty {
        return Ok(0.0);
    }
    let e = c.torque_constant * gear_ratio * knee_velocity_rad_s;
    Ok(e * e / c.resistance)
}

/// Reaction torque magnitude `K_T²·G²·|θ̇|/R` reflected to the knee while
/// connected, zero otherwise.
pub fn knee_torque(
    gear_ratio: f64,
    duty: bool,
    knee_velocity_rad_s: f64,
    c: &DeviceConstants,
) -> Result<f64, SimError> {
    c.check_gear(gear_ratio)?;
    if !duty {
        return Ok(0.0);
    }
    let kg = c.torque_constant * gear_ratio;
    Ok(kg * kg * knee_velocity_rad_s.abs() / c.resistance)
}

/// Raised-cosine knee trajectory: angle `A·(1 − cos(2π·f·t))/2` with its
/// analytic derivative, flagged by the harvest rule.
pub fn gait_trajectory(
    task: &TaskProfile,
    duration_s: f64,
    dt_s: f64,
) -> Result<Vec<GaitSample>, SimError> {
    if !(duration_s > 0.0) || !(dt_s > 0.0) {
        return Err(SimError::ParameterDomain(format!(
            "duration {duration_s} and step {dt_s} must be positive"
        )));
    }
    let n = (duration_s / dt_s).round() as usize;
    let amp = task.swing_amplitude_rad;
    let omega = 2.0 * PI * task.stride_hz;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt_s;
        let phase = omega * t;
        let angle = amp * (1.0 - phase.cos()) / 2.0;
        let velocity = amp * omega * phase.sin() / 2.0;
        samples.push(GaitSample {
            time_s: t,
            knee_angle_rad: angle,
            knee_velocity_rad_s: velocity,
            harvesting: harvest_window(angle, velocity),
        });
    }
    Ok(samples)
}

/// Polynomial effort surrogate, strictly increasing in mean torque.
pub fn emg_surrogate(mean_torque_nm: f64, task: &TaskProfile) -> f64 {
    let b = &task.burden;
    b.intercept + b.linear * mean_torque_nm + b.quadratic * mean_torque_nm * mean_torque_nm
}

/// Noiseless per-trial aggregates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrialStats {
    pub mean_power_w: f64,
    pub mean_torque_nm: f64,
    pub emg: f64,
    pub score: f64,
}

/// Simulates one trial without noise: power and torque averaged over the
/// harvest-window samples (duty on inside the window, off outside), effort
/// from the mean torque, score = mean power − weight·effort.
pub fn trial_stats(
    gear_ratio: f64,
    task: &TaskProfile,
    c: &DeviceConstants,
    score: &ScoreConfig,
) -> Result<TrialStats, SimError> {
    c.check_gear(gear_ratio)?;
    let samples = gait_trajectory(task, score.trial_window_s, score.sample_dt_s)?;
    let mut n = 0usize;
    let mut power_sum = 0.0;
    let mut torque_sum = 0.0;
    for s in &samples {
        if s.harvesting {
            let duty = c.duty_connected;
            n += 1;
            power_sum += instantaneous_power(gear_ratio, duty, s.knee_velocity_rad_s, c)?;
            torque_sum += knee_torque(gear_ratio, duty, s.knee_velocity_rad_s, c)?;
        }
    }
    let mean_power_w = if n > 0 { power_sum / n as f64 } else { 0.0 };
    let mean_torque_nm = if n > 0 { torque_sum / n as f64 } else { 0.0 };
    let emg = emg_surrogate(mean_torque_nm, task);
    Ok(TrialStats {
        mean_power_w,
        mean_torque_nm,
        emg,
        score: mean_power_w - score.burden_weight * emg,
    })
}

/// One noisy oracle evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub gear_ratio: f64,
    pub task_label: String,
    pub mean_power_w: f64,
    pub mean_torque_nm: f64,
    pub emg: f64,
    pub score: f64,
    pub seed: u64,
}

/// Runs one trial and adds `N(0, noise_std²)` noise drawn from a generator
/// seeded with `seed`; bit-reproducible for equal inputs.
pub fn trial_score(
    gear_ratio: f64,
    task: &TaskProfile,
    c: &DeviceConstants,
    score: &ScoreConfig,
    seed: u64,
) -> Result<TrialRecord, SimError> {
    let stats = trial_stats(gear_ratio, task, c, score)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let eps: f64 = rng.sample(StandardNormal);
    Ok(TrialRecord {
        gear_ratio,
        task_label: task.label.clone(),
        mean_power_w: stats.mean_power_w,
        mean_torque_nm: stats.mean_torque_nm,
        emg: stats.emg,
        score: stats.score + task.noise_std * eps,
        seed,
    })
}

/// Harvest-window velocity statistics of the sampled trajectory.
#[derive(Debug, Clone, Copy)]
pub struct WindowStats {
    pub mean_squared_velocity: f64,
    pub mean_abs_velocity: f64,
    pub window_samples: usize,
}

pub fn harvest_window_stats(
    task: &TaskProfile,
    score: &ScoreConfig,
) -> Result<WindowStats, SimError> {
    let samples = gait_trajectory(task, score.trial_window_s, score.sample_dt_s)?;
    let mut n = 0usize;
    let mut sq = 0.0;
    let mut ab = 0.0;
    for s in &samples {
        if s.harvesting {
            n += 1;
            sq += s.knee_velocity_rad_s * s.knee_velocity_rad_s;
            ab += s.knee_velocity_rad_s.abs();
        }
    }
    if n == 0 {
        return Ok(WindowStats {
            mean_squared_velocity: 0.0,
            mean_abs_velocity: 0.0,
            window_samples: 0,
        });
    }
    Ok(WindowStats {
        mean_squared_velocity: sq / n as f64,
        mean_abs_velocity: ab / n as f64,
        window_samples: n,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GroundTruthPoint {
    pub gear_ratio: f64,
    pub score: f64,
}

/// Noiseless score over a grid with its argmax, plus the closed-form interior
/// optimum when it exists in range.
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    pub curve: Vec<GroundTruthPoint>,
    pub optimum_index: usize,
    pub optimum_gear_ratio: f64,
    pub optimum_score: f64,
    pub analytic_optimum: Option<f64>,
}

/// Brute-force sweep of the noiseless score. With mean power `a·G²` and mean
/// torque `b·G²` over the harvest window, the score is
/// `a·G² − γ(e0 + e1·b·G² + e2·b²·G⁴)`, giving the interior optimum
/// `G*² = (a − γ·e1·b) / (2γ·e2·b²)`.
pub fn ground_truth(
    task: &TaskProfile,
    grid: &[f64],
    c: &DeviceConstants,
    score: &ScoreConfig,
) -> Result<GroundTruth, SimError> {
    if grid.is_empty() {
        return Err(SimError::ParameterDomain("empty evaluation grid".into()));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut best = 0usize;
    for (i, &g) in grid.iter().enumerate() {
        let stats = trial_stats(g, task, c, score)?;
        curve.push(GroundTruthPoint {
            gear_ratio: g,
            score: stats.score,
        });
        if stats.score > curve[best].score {
            best = i;
        }
    }

    let w = harvest_window_stats(task, score)?;
    let kt2_r = c.torque_constant * c.torque_constant / c.resistance;
    let a = kt2_r * w.mean_squared_velocity;
    let b = kt2_r * w.mean_abs_velocity;
    let gamma = score.burden_weight;
    let num = a - gamma * task.burden.linear * b;
    let den = 2.0 * gamma * task.burden.quadratic * b * b;
    let analytic_optimum = if den > 0.0 && num > 0.0 {
        let g = (num / den).sqrt();
        (g >= c.gear_min && g <= c.gear_max).then_some(g)
    } else {
        None
    };

    Ok(GroundTruth {
        optimum_index: best,
        optimum_gear_ratio: curve[best].gear_ratio,
        optimum_score: curve[best].score,
        curve,
        analytic_optimum,
    })
}

/// Oracle adapter over a list of task profiles. Every trial gets its own
/// generator seeded from `(base seed, trial index)`, so a query sequence is
/// reproducible regardless of which arm issues it.
#[derive(Debug, Clone)]
pub struct SimOracle {
    tasks: Vec<TaskProfile>,
    consts: DeviceConstants,
    score: ScoreConfig,
    base_seed: u64,
    trial_index: u64,
}

impl SimOracle {
    pub fn new(
        tasks: Vec<TaskProfile>,
        consts: DeviceConstants,
        score: ScoreConfig,
        base_seed: u64,
    ) -> Self {
        Self {
            tasks,
            consts,
            score,
            base_seed,
            trial_index: 0,
        }
    }

    pub fn trials_run(&self) -> u64 {
        self.trial_index
    }

    pub fn tasks(&self) -> &[TaskProfile] {
        &self.tasks
    }
}

impl Oracle for SimOracle {
    fn evaluate(&mut self, gear_ratio: f64, task: usize) -> Result<f64, OracleError> {
        let profile = self
            .tasks
            .get(task)
            .ok_or_else(|| OracleError(format!("unknown task index {task}")))?;
        let seed = seeding::mix(self.base_seed, self.trial_index);
        self.trial_index += 1;
        let record = trial_score(gear_ratio, profile, &self.consts, &self.score, seed)
            .map_err(|e| OracleError(e.to_string()))?;
        Ok(record.score)
    }
}
