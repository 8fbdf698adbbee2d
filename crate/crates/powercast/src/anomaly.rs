//! Rolling-window model-fit monitoring and down-node counting.
//!
//! When the machine begins to fail, the linear relation between component
//! and system power degrades before the monitoring data disappears, so a
//! sharp rise of the windowed NRMSE works as an advance alarm. A mass
//! drop-out of nodes is the late, unambiguous signal.

use std::collections::BTreeMap;

use crate::ingest::{NodeState, ReconciledDataset};
use crate::trace::TimeGrid;

/// Default moving window: 48 hours.
pub const DEFAULT_WINDOW_SECS: i64 = 48 * 3600;
/// Minimum common points inside a window for the NRMSE to count.
pub const DEFAULT_MIN_POINTS: usize = 12;

/// Moving-window NRMSE of a prediction, keyed by window end.
#[derive(Debug, Clone)]
pub struct WindowedFitSeries {
    pub window_secs: i64,
    pub values: BTreeMap<i64, f64>,
}

/// NRMSE over `[t - window, t]` for every grid point `t`. Points with fewer
/// than `min_points` common samples in the window, or an undefined metric,
/// are absent.
pub fn rolling_nrmse(
    predicted: &BTreeMap<i64, f64>,
    measured: &BTreeMap<i64, f64>,
    window_secs: i64,
    grid: &TimeGrid,
    min_points: usize,
) -> WindowedFitSeries {
    let common: Vec<(i64, f64, f64)> = measured
        .iter()
        .filter_map(|(&t, &m)| predicted.get(&t).map(|&p| (t, p, m)))
        .collect();

    let mut values = BTreeMap::new();
    let mut lo = 0usize;
    let mut hi = 0usize;
    let mut sum_sq = 0.0;
    let mut sum_m = 0.0;
    for t in grid.points() {
        while hi < common.len() && common[hi].0 <= t {
            let (_, p, m) = common[hi];
            sum_sq += (m - p) * (m - p);
            sum_m += m;
            hi += 1;
        }
        while lo < hi && common[lo].0 < t - window_secs {
            let (_, p, m) = common[lo];
            sum_sq -= (m - p) * (m - p);
            sum_m -= m;
            lo += 1;
        }
        let n = hi - lo;
        if n >= min_points.max(1) {
            let mean = sum_m / n as f64;
            if mean > 0.0 {
                values.insert(t, (sum_sq.max(0.0) / n as f64).sqrt() / mean);
            }
        }
    }
    WindowedFitSeries { window_secs, values }
}

/// Nodes with no data of any kind at `t`.
pub fn down_node_count(dataset: &ReconciledDataset, t: i64) -> usize {
    dataset
        .nodes
        .iter()
        .filter(|&&n| dataset.node_state(t, n) == NodeState::Down)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlarmKind {
    /// The windowed model fit degraded: absolute level or growth rate.
    FitDegradation,
    /// At least the configured fraction of nodes dropped out.
    MassNodeDown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlarmEvent {
    pub at: i64,
    pub kind: AlarmKind,
    /// Windowed NRMSE or down-node count at the onset.
    pub detail: f64,
}

/// Detection thresholds. The fit thresholds are usually derived from the
/// training-window NRMSE via [`AlarmThresholds::from_baseline`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlarmThresholds {
    /// Absolute windowed-NRMSE level that triggers an alarm.
    pub nrmse_abs: f64,
    /// NRMSE increase per hour that, sustained for 2 consecutive grid
    /// points, triggers an alarm.
    pub nrmse_slope_per_hour: f64,
    /// Fraction of down nodes that triggers the mass-outage alarm.
    pub down_frac: f64,
}

impl AlarmThresholds {
    /// Floors keep a near-perfect baseline (NRMSE around zero) from turning
    /// numerical noise into alarms.
    pub const MIN_ABS: f64 = 0.01;
    pub const MIN_SLOPE: f64 = 0.005;

    /// Defaults relative to the training-window fit: alarm at triple the
    /// baseline error, or when the error grows by half the baseline per
    /// hour (a doubling within two hours).
    pub fn from_baseline(train_nrmse: f64) -> AlarmThresholds {
        AlarmThresholds {
            nrmse_abs: (3.0 * train_nrmse).max(Self::MIN_ABS),
            nrmse_slope_per_hour: (train_nrmse / 2.0).max(Self::MIN_SLOPE),
            down_frac: 0.5,
        }
    }
}

/// Scan the fit series and the down-node series for alarm conditions.
/// Events are edge-triggered: one per contiguous excursion.
pub fn detect_alarms(
    fit: &WindowedFitSeries,
    downs: &BTreeMap<i64, usize>,
    total_nodes: usize,
    thresholds: &AlarmThresholds,
) -> Vec<AlarmEvent> {
    let mut events = Vec::new();

    let hour = 3600i64;
    let slope_at = |t: i64| -> Option<f64> {
        let now = fit.values.get(&t)?;
        let before = fit.values.get(&(t - hour))?;
        Some(now - before)
    };

    let mut in_fit_excursion = false;
    let mut prev_slope_high = false;
    for (&t, &value) in &fit.values {
        let slope_high = slope_at(t).is_some_and(|s| s > thresholds.nrmse_slope_per_hour);
        let condition = value > thresholds.nrmse_abs || (slope_high && prev_slope_high);
        if condition && !in_fit_excursion {
            events.push(AlarmEvent { at: t, kind: AlarmKind::FitDegradation, detail: value });
        }
        in_fit_excursion = condition;
        prev_slope_high = slope_high;
    }

    if total_nodes > 0 {
        let mut in_down_excursion = false;
        for (&t, &count) in downs {
            let condition = count as f64 / total_nodes as f64 >= thresholds.down_frac;
            if condition && !in_down_excursion {
                events.push(AlarmEvent { at: t, kind: AlarmKind::MassNodeDown, detail: count as f64 });
            }
            in_down_excursion = condition;
        }
    }

    events.sort_by_key(|e| (e.at, e.kind as u8));
    events
}
