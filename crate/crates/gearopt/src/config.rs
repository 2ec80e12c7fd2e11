//! Flat `key = value` run settings.
//!
//! The format is line-oriented text: blank lines and `#` comments are
//! ignored, keys are namespaced with dots (`device.kt`, `score.gamma`,
//! `mtbo.kappa`), and a handful of common keys accept bare aliases
//! (`kt`, `gamma`, `slopes`, ...). Unknown keys are rejected.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bench::ScenarioFamily;
use crate::sim::{DeviceConstants, ScoreConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: invalid value `{value}` ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
}

/// Raw parsed pairs, last assignment wins.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pairs: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.trim().to_string(),
                });
            };
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { pairs })
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.pairs
            .insert(key.trim().to_string(), value.trim().to_string());
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Fully resolved settings with defaults for every field.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub device: DeviceConstants,
    pub score: ScoreConfig,
    pub slopes: Vec<f64>,
    pub speeds: Vec<f64>,
    pub noise_pct: f64,
    /// Task conditions for the optimize / random-baseline modes,
    /// as (slope, speed) pairs.
    pub tasks: Vec<(f64, f64)>,
    pub kappa: f64,
    pub grid_points: usize,
    pub variance_threshold: f64,
    pub repeat_count: usize,
    pub query_cap: usize,
    /// Random restarts per refit inside the optimization loop.
    pub fit_restarts: usize,
    pub replicates: usize,
    pub participants: Vec<String>,
    pub families: Vec<ScenarioFamily>,
    pub parallel: bool,
    pub log_queries: bool,
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            device: DeviceConstants::default(),
            score: ScoreConfig::default(),
            slopes: vec![0.0, 5.0, 10.0],
            speeds: vec![1.0, 1.5, 2.0],
            noise_pct: 0.03,
            tasks: vec![(0.0, 1.0)],
            kappa: 100.0,
            grid_points: 50,
            variance_threshold: 5e-4,
            repeat_count: 3,
            query_cap: 50,
            fit_restarts: 3,
            replicates: 20,
            participants: vec!["p1".into(), "p2".into()],
            families: vec![ScenarioFamily::MultiSlope, ScenarioFamily::MultiSpeed],
            parallel: true,
            log_queries: true,
            seed: 0,
        }
    }
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    value.parse().map_err(|_| bad(key, value, "not a number"))
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value
        .parse()
        .map_err(|_| bad(key, value, "not a non-negative integer"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64, ConfigError> {
    value
        .parse()
        .map_err(|_| bad(key, value, "not a non-negative integer"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, value, "not a boolean")),
    }
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    let items: Result<Vec<f64>, _> = value.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let items = items.map_err(|_| bad(key, value, "not a comma-separated number list"))?;
    if items.is_empty() {
        return Err(bad(key, value, "empty list"));
    }
    Ok(items)
}

/// `slope:speed` pairs, e.g. `0:1,5:1,10:1`.
fn parse_task_list(key: &str, value: &str) -> Result<Vec<(f64, f64)>, ConfigError> {
    let mut tasks = Vec::new();
    for item in value.split(',') {
        let Some((s, v)) = item.split_once(':') else {
            return Err(bad(key, value, "expected slope:speed pairs"));
        };
        let slope = s.trim().parse().map_err(|_| bad(key, value, "bad slope"))?;
        let speed = v.trim().parse().map_err(|_| bad(key, value, "bad speed"))?;
        tasks.push((slope, speed));
    }
    if tasks.is_empty() {
        return Err(bad(key, value, "empty task list"));
    }
    Ok(tasks)
}

impl RunSettings {
    /// Defaults overlaid with parsed settings; unknown keys are errors.
    pub fn from_settings(settings: &Settings) -> Result<Self, ConfigError> {
        let mut out = Self::default();
        for (key, value) in settings.pairs() {
            out.apply(key, value)?;
        }
        Ok(out)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "device.kt" | "kt" => self.device.torque_constant = parse_f64(key, value)?,
            "device.r" | "r" => self.device.resistance = parse_f64(key, value)?,
            "device.g_min" | "g_min" => self.device.gear_min = parse_f64(key, value)?,
            "device.g_max" | "g_max" => self.device.gear_max = parse_f64(key, value)?,
            "device.duty_connected" => self.device.duty_connected = parse_bool(key, value)?,
            "score.gamma" | "gamma" => self.score.burden_weight = parse_f64(key, value)?,
            "score.trial_window" => self.score.trial_window_s = parse_f64(key, value)?,
            "sim.dt" => self.score.sample_dt_s = parse_f64(key, value)?,
            "sim.slopes" | "slopes" => self.slopes = parse_f64_list(key, value)?,
            "sim.speeds" | "speeds" => self.speeds = parse_f64_list(key, value)?,
            "sim.noise_pct" | "noise_pct" => self.noise_pct = parse_f64(key, value)?,
            "tasks" => self.tasks = parse_task_list(key, value)?,
            "mtbo.kappa" => self.kappa = parse_f64(key, value)?,
            "mtbo.grid_points" => self.grid_points = parse_usize(key, value)?,
            "mtbo.variance_threshold" => self.variance_threshold = parse_f64(key, value)?,
            "mtbo.repeat_count" => self.repeat_count = parse_usize(key, value)?,
            "mtbo.query_cap" => self.query_cap = parse_usize(key, value)?,
            "mtbo.restarts" => self.fit_restarts = parse_usize(key, value)?,
            "bench.replicates" => self.replicates = parse_usize(key, value)?,
            "bench.participants" => {
                self.participants = value.split(',').map(|s| s.trim().to_string()).collect();
                if self.participants.iter().any(|p| p.is_empty()) {
                    return Err(bad(key, value, "empty participant name"));
                }
            }
            "bench.families" => {
                let mut families = Vec::new();
                for f in value.split(',') {
                    families.push(match f.trim() {
                        "slope" | "multi-slope" => ScenarioFamily::MultiSlope,
                        "speed" | "multi-speed" => ScenarioFamily::MultiSpeed,
                        other => return Err(bad(key, other, "expected slope or speed")),
                    });
                }
                if families.is_empty() {
                    return Err(bad(key, value, "empty family list"));
                }
                self.families = families;
            }
            "bench.parallel" => self.parallel = parse_bool(key, value)?,
            "log.queries" => self.log_queries = parse_bool(key, value)?,
            "seed" => self.seed = parse_u64(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_aliases() {
        let text = "\n# device\nkt = 0.08\ndevice.r = 2.0\n\nscore.gamma = 3  # inline comment\nslopes = 0, 5\n";
        let settings = Settings::parse(text).unwrap();
        let rs = RunSettings::from_settings(&settings).unwrap();
        assert_eq!(rs.device.torque_constant, 0.08);
        assert_eq!(rs.device.resistance, 2.0);
        assert_eq!(rs.score.burden_weight, 3.0);
        assert_eq!(rs.slopes, vec![0.0, 5.0]);
        // untouched fields keep defaults
        assert_eq!(rs.speeds, vec![1.0, 1.5, 2.0]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut s = Settings::default();
        s.set("mtbo.kappa", "abc");
        assert!(matches!(
            RunSettings::from_settings(&s),
            Err(ConfigError::BadValue { .. })
        ));
        let mut s = Settings::default();
        s.set("not.a.key", "1");
        assert!(matches!(
            RunSettings::from_settings(&s),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(Settings::parse("just a line\n").is_err());
    }

    #[test]
    fn task_list_and_override_roundtrip() {
        let mut s = Settings::default();
        s.set("tasks", "0:1, 5:1.5,10:2");
        s.set("gamma", "0");
        let rs = RunSettings::from_settings(&s).unwrap();
        assert_eq!(rs.tasks, vec![(0.0, 1.0), (5.0, 1.5), (10.0, 2.0)]);
        assert_eq!(rs.score.burden_weight, 0.0);
    }

    #[test]
    fn family_names() {
        let mut s = Settings::default();
        s.set("bench.families", "slope");
        let rs = RunSettings::from_settings(&s).unwrap();
        assert_eq!(rs.families, vec![ScenarioFamily::MultiSlope]);
    }
}
