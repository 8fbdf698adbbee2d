//! Flat `key=value` run configuration.
//!
//! One setting per line, with dotted section prefixes (`svr.C=1,10,100`).
//! Timestamps accept epoch seconds or ISO-8601. Unknown keys are rejected
//! so typos fail loudly instead of silently using defaults.

use std::path::{Path, PathBuf};

use crate::anomaly;
use crate::error::{Error, Result};
use crate::pipeline::{KernelChoice, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub jobs: PathBuf,
    pub allocations: PathBuf,
    pub component_power: PathBuf,
    pub system_power: PathBuf,
    pub idle: PathBuf,
    pub out_dir: PathBuf,
    pub train_window: Option<(i64, i64)>,
    pub test_window: Option<(i64, i64)>,
    pub train: TrainConfig,
    pub anomaly_window_secs: i64,
    pub anomaly_min_points: usize,
    /// Absolute windowed-NRMSE threshold; derived from the training
    /// baseline when absent.
    pub anomaly_nrmse_abs: Option<f64>,
    /// Hourly NRMSE growth threshold; derived from the baseline when absent.
    pub anomaly_slope_per_hour: Option<f64>,
    pub anomaly_down_frac: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            jobs: "jobs.csv".into(),
            allocations: "allocations.csv".into(),
            component_power: "component_power.csv".into(),
            system_power: "system_power.csv".into(),
            idle: "idle.cfg".into(),
            out_dir: "out".into(),
            train_window: None,
            test_window: None,
            train: TrainConfig::default(),
            anomaly_window_secs: anomaly::DEFAULT_WINDOW_SECS,
            anomaly_min_points: anomaly::DEFAULT_MIN_POINTS,
            anomaly_nrmse_abs: None,
            anomaly_slope_per_hour: None,
            anomaly_down_frac: 0.5,
        }
    }
}

/// Epoch seconds, or an ISO-8601 timestamp like `2014-09-01T00:00:00Z`.
pub fn parse_time(s: &str) -> Result<i64> {
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|dt| dt.timestamp())
        .map_err(|e| Error::Config(format!("cannot parse time {s:?}: {e}")))
}

fn parse_f64_list(value: &str, key: &str) -> Result<Vec<f64>> {
    let out: std::result::Result<Vec<f64>, _> = value.split(',').map(|v| v.trim().parse::<f64>()).collect();
    match out {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(Error::Config(format!("{key}: expected a comma-separated list of numbers, got {value:?}"))),
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Relative paths in the file resolve against the config's directory.
    pub fn parse(text: &str, base: &Path) -> Result<Config> {
        let mut cfg = Config::default();
        let mut train_start = None;
        let mut train_end = None;
        let mut test_start = None;
        let mut test_end = None;
        let resolve = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "data.jobs" => cfg.jobs = resolve(value),
                "data.allocations" => cfg.allocations = resolve(value),
                "data.component_power" => cfg.component_power = resolve(value),
                "data.system_power" => cfg.system_power = resolve(value),
                "data.idle" => cfg.idle = resolve(value),
                "out_dir" => cfg.out_dir = resolve(value),
                "train.start" => train_start = Some(parse_time(value)?),
                "train.end" => train_end = Some(parse_time(value)?),
                "test.start" => test_start = Some(parse_time(value)?),
                "test.end" => test_end = Some(parse_time(value)?),
                "svr.C" => cfg.train.svr_c = parse_f64_list(value, key)?,
                "svr.epsilon" => cfg.train.svr_epsilon = parse_f64_list(value, key)?,
                "svr.gamma_scale" => cfg.train.svr_gamma_scale = parse_f64_list(value, key)?,
                "svr.kernel" => {
                    cfg.train.svr_kernel = match value {
                        "rbf" => KernelChoice::Rbf,
                        "linear" => KernelChoice::Linear,
                        other => return Err(Error::Config(format!("svr.kernel: unknown kernel {other:?}"))),
                    }
                }
                "svr.kkt_tol" => {
                    cfg.train.svr_kkt_tol = value
                        .parse()
                        .map_err(|_| Error::Config(format!("svr.kkt_tol: bad number {value:?}")))?
                }
                "svr.max_passes" => {
                    cfg.train.svr_max_passes = value
                        .parse()
                        .map_err(|_| Error::Config(format!("svr.max_passes: bad number {value:?}")))?
                }
                "anomaly.window_hours" => {
                    let hours: f64 = value
                        .parse()
                        .map_err(|_| Error::Config(format!("anomaly.window_hours: bad number {value:?}")))?;
                    if hours <= 0.0 {
                        return Err(Error::Config("anomaly.window_hours must be positive".into()));
                    }
                    cfg.anomaly_window_secs = (hours * 3600.0) as i64;
                }
                "anomaly.min_points" => {
                    cfg.anomaly_min_points = value
                        .parse()
                        .map_err(|_| Error::Config(format!("anomaly.min_points: bad number {value:?}")))?
                }
                "anomaly.nrmse_abs" => {
                    cfg.anomaly_nrmse_abs = if value == "auto" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| Error::Config(format!("anomaly.nrmse_abs: bad number {value:?}")))?)
                    }
                }
                "anomaly.nrmse_slope_per_hour" => {
                    cfg.anomaly_slope_per_hour = if value == "auto" {
                        None
                    } else {
                        Some(
                            value
                                .parse()
                                .map_err(|_| Error::Config(format!("anomaly.nrmse_slope_per_hour: bad number {value:?}")))?,
                        )
                    }
                }
                "anomaly.down_frac" => {
                    cfg.anomaly_down_frac = value
                        .parse()
                        .map_err(|_| Error::Config(format!("anomaly.down_frac: bad number {value:?}")))?
                }
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", i + 1))),
            }
        }

        cfg.train_window = match (train_start, train_end) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => return Err(Error::Config("train.start and train.end must both be given".into())),
        };
        cfg.test_window = match (test_start, test_end) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => return Err(Error::Config("test.start and test.end must both be given".into())),
        };
        Ok(cfg)
    }

    /// Thresholds for the monitor, falling back to baseline-derived values.
    pub fn alarm_thresholds(&self, train_nrmse: f64) -> anomaly::AlarmThresholds {
        let auto = anomaly::AlarmThresholds::from_baseline(train_nrmse);
        anomaly::AlarmThresholds {
            nrmse_abs: self.anomaly_nrmse_abs.unwrap_or(auto.nrmse_abs),
            nrmse_slope_per_hour: self.anomaly_slope_per_hour.unwrap_or(auto.nrmse_slope_per_hour),
            down_frac: self.anomaly_down_frac,
        }
    }
}
