//! The first model layer: an affine map from total computing power to total
//! system power, covering networking, IO and everything else behind the
//! main electric panel.
//!
//! The map is fitted by ordinary least squares on measured series and then
//! applied to predicted computing power, which composes the two layers into
//! a workload-to-system-power predictor.

use std::collections::BTreeMap;
use std::path::Path;

use crate::aggregate::{ComponentPowerSeries, Provenance};
use crate::error::{Error, Result};

/// Slope and intercept of the component-to-system map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemLinearModel {
    pub slope: f64,
    pub intercept: f64,
}

impl SystemLinearModel {
    pub fn apply(&self, component_watts: f64) -> f64 {
        self.slope * component_watts + self.intercept
    }
}

/// Where a system-level series came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemProvenance {
    Measured,
    /// Linear model applied to measured component power.
    EstimatedFromMeasuredComponents,
    /// Linear model applied to workload-predicted component power.
    PredictedFromWorkload,
}

#[derive(Debug, Clone)]
pub struct SystemPowerSeries {
    pub values: BTreeMap<i64, f64>,
    pub provenance: SystemProvenance,
}

fn common_points(a: &BTreeMap<i64, f64>, b: &BTreeMap<i64, f64>) -> Vec<(f64, f64)> {
    a.iter()
        .filter_map(|(t, &x)| b.get(t).map(|&y| (x, y)))
        .collect()
}

/// Ordinary least squares of system power against component power over
/// their common grid points. Uses the centered formulation, which is
/// numerically stable for large offsets.
pub fn fit_linear(component: &ComponentPowerSeries, system: &SystemPowerSeries) -> Result<SystemLinearModel> {
    let pairs = common_points(&component.values, &system.values);
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Precondition(format!("linear fit needs at least 2 common points, got {n}")));
    }
    let mean_x: f64 = pairs.iter().map(|(x, _)| x).sum::<f64>() / n as f64;
    let mean_y: f64 = pairs.iter().map(|(_, y)| y).sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &pairs {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("component power is constant over the window".into()));
    }
    let slope = sxy / sxx;
    Ok(SystemLinearModel { slope, intercept: mean_y - slope * mean_x })
}

/// Apply the fitted map pointwise. The provenance of the output follows the
/// provenance of the input series.
pub fn predict_system(model: &SystemLinearModel, component: &ComponentPowerSeries) -> SystemPowerSeries {
    let values = component.values.iter().map(|(&t, &x)| (t, model.apply(x))).collect();
    let provenance = match component.provenance {
        Provenance::Measured => SystemProvenance::EstimatedFromMeasuredComponents,
        Provenance::Predicted => SystemProvenance::PredictedFromWorkload,
    };
    SystemPowerSeries { values, provenance }
}

/// Pearson correlation between component and system power over common
/// points.
pub fn correlation(component: &ComponentPowerSeries, system: &SystemPowerSeries) -> Result<f64> {
    pearson(&component.values, &system.values)
}

pub(crate) fn pearson(a: &BTreeMap<i64, f64>, b: &BTreeMap<i64, f64>) -> Result<f64> {
    let pairs = common_points(a, b);
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Precondition(format!("correlation needs at least 2 common points, got {n}")));
    }
    let mean_x: f64 = pairs.iter().map(|(x, _)| x).sum::<f64>() / n as f64;
    let mean_y: f64 = pairs.iter().map(|(_, y)| y).sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &pairs {
        sxx += (x - mean_x) * (x - mean_x);
        syy += (y - mean_y) * (y - mean_y);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("correlation of a constant series".into()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Persist the model as the two-line `slope=`/`intercept=` text format.
pub fn save_linear_model(path: &Path, model: &SystemLinearModel) -> Result<()> {
    let text = format!("slope={}\nintercept={}\n", model.slope, model.intercept);
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

pub fn load_linear_model(path: &Path) -> Result<SystemLinearModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut slope = None;
    let mut intercept = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some(("slope", v)) => slope = v.parse::<f64>().ok(),
            Some(("intercept", v)) => intercept = v.parse::<f64>().ok(),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: i + 1,
                    message: format!("expected slope=/intercept=, got {line:?}"),
                })
            }
        }
    }
    match (slope, intercept) {
        (Some(slope), Some(intercept)) => Ok(SystemLinearModel { slope, intercept }),
        _ => Err(Error::Parse { path: path.to_path_buf(), row: 0, message: "missing slope or intercept".into() }),
    }
}
