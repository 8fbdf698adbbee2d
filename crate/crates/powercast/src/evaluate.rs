//! Regression metrics and the cross-validation protocol.
//!
//! NRMSE is root-mean-squared error normalized by the mean of the measured
//! series; R-squared compares the error against the natural variability, so
//! zero means no better than always predicting the mean. Both are computed
//! over the common grid points of the two series, never over sentinels:
//! undefined cases raise typed errors instead of propagating NaN.

use std::collections::BTreeMap;

use crate::aggregate;
use crate::error::{Error, Result};
use crate::ingest::ReconciledDataset;
use crate::pipeline::{predict_all_jobs, train_models, TrainConfig, TrainedModels};
use crate::syslayer;

/// Metrics of one prediction run over one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationReport {
    pub nrmse: f64,
    pub r_squared: f64,
    pub pearson: f64,
    pub n_points: usize,
    pub window: (i64, i64),
}

/// Chronologically ordered train and test windows, half-open in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: (i64, i64),
    pub test: (i64, i64),
}

impl SplitSpec {
    pub fn new(train: (i64, i64), test: (i64, i64)) -> Result<Self> {
        if train.0 >= train.1 || test.0 >= test.1 {
            return Err(Error::Config(format!("empty evaluation window: train {train:?}, test {test:?}")));
        }
        if train.1 > test.0 {
            return Err(Error::Config(format!(
                "train window {train:?} must precede and not overlap test window {test:?}"
            )));
        }
        Ok(SplitSpec { train, test })
    }
}

fn paired(predicted: &BTreeMap<i64, f64>, measured: &BTreeMap<i64, f64>) -> Vec<(f64, f64)> {
    measured
        .iter()
        .filter_map(|(t, &m)| predicted.get(t).map(|&p| (p, m)))
        .collect()
}

/// Mean-normalized root-mean-squared error over common grid points.
pub fn nrmse(predicted: &BTreeMap<i64, f64>, measured: &BTreeMap<i64, f64>) -> Result<f64> {
    let pairs = paired(predicted, measured);
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("no common points between predicted and measured".into()));
    }
    let n = pairs.len() as f64;
    let mean: f64 = pairs.iter().map(|(_, m)| m).sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::UndefinedMetric("measured series has zero mean".into()));
    }
    let mse: f64 = pairs.iter().map(|(p, m)| (m - p) * (m - p)).sum::<f64>() / n;
    Ok(mse.sqrt() / mean)
}

/// Coefficient of determination over common grid points.
pub fn r_squared(predicted: &BTreeMap<i64, f64>, measured: &BTreeMap<i64, f64>) -> Result<f64> {
    let pairs = paired(predicted, measured);
    if pairs.len() < 2 {
        return Err(Error::UndefinedMetric(format!("r-squared needs at least 2 common points, got {}", pairs.len())));
    }
    let n = pairs.len() as f64;
    let mean: f64 = pairs.iter().map(|(_, m)| m).sum::<f64>() / n;
    let ss_res: f64 = pairs.iter().map(|(p, m)| (m - p) * (m - p)).sum();
    let ss_tot: f64 = pairs.iter().map(|(_, m)| (m - mean) * (m - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("measured series is constant".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// All three metrics of one layer over a window.
pub fn report(
    predicted: &BTreeMap<i64, f64>,
    measured: &BTreeMap<i64, f64>,
    window: (i64, i64),
) -> Result<EvaluationReport> {
    Ok(EvaluationReport {
        nrmse: nrmse(predicted, measured)?,
        r_squared: r_squared(predicted, measured)?,
        pearson: syslayer::pearson(predicted, measured)?,
        n_points: paired(predicted, measured).len(),
        window,
    })
}

/// Restrict a series to a half-open window.
pub fn window_values(series: &BTreeMap<i64, f64>, window: (i64, i64)) -> BTreeMap<i64, f64> {
    series.range(window.0..window.1).map(|(&t, &v)| (t, v)).collect()
}

/// The three evaluation layers of one train/test split.
#[derive(Debug, Clone)]
pub struct SplitReports {
    /// Linear model applied to measured component power vs measured system power.
    pub step1: EvaluationReport,
    /// Workload-predicted component power vs measured component power.
    pub step2: EvaluationReport,
    /// Full composition vs measured system power, on the common window.
    pub combined: EvaluationReport,
}

/// Per-layer comparison series for export and plotting.
#[derive(Debug, Clone, Default)]
pub struct LayerSeries {
    /// (ts, measured, predicted) triples per layer.
    pub step1: Vec<(i64, f64, f64)>,
    pub step2: Vec<(i64, f64, f64)>,
    pub combined: Vec<(i64, f64, f64)>,
}

/// Evaluate all three layers of already-trained models on a test window.
/// The combined report is restricted to grid points where both the step-1
/// comparison and the job predictions exist, so the two system layers are
/// compared over the same domain.
pub fn reports_for_models(
    dataset: &ReconciledDataset,
    models: &TrainedModels,
    test: (i64, i64),
) -> Result<(SplitReports, LayerSeries)> {
    let predictions = predict_all_jobs(dataset, models)?;

    let measured_comp = aggregate::measured_component_series(dataset);
    let predicted_comp = aggregate::predicted_component_series(&predictions, dataset, &dataset.idle)?;

    let meas_comp_test = window_values(&measured_comp.values, test);
    let pred_comp_test = window_values(&predicted_comp.values, test);
    let meas_sys_test = window_values(&dataset.system_power, test);

    // Step 1: system power estimated from measured component power.
    let est_sys: BTreeMap<i64, f64> = meas_comp_test.iter().map(|(&t, &x)| (t, models.lm.apply(x))).collect();
    let step1 = report(&est_sys, &meas_sys_test, test)?;

    // Step 2: component power predicted from workload.
    let step2 = report(&pred_comp_test, &meas_comp_test, test)?;

    // Combined: the 2-layer composition, on the common part.
    let common_pred: BTreeMap<i64, f64> = pred_comp_test
        .iter()
        .filter(|(t, _)| est_sys.contains_key(t))
        .map(|(&t, &x)| (t, models.lm.apply(x)))
        .collect();
    let combined = report(&common_pred, &meas_sys_test, test)?;

    let triples = |pred: &BTreeMap<i64, f64>, meas: &BTreeMap<i64, f64>| {
        meas.iter()
            .filter_map(|(&t, &m)| pred.get(&t).map(|&p| (t, m, p)))
            .collect::<Vec<_>>()
    };
    let series = LayerSeries {
        step1: triples(&est_sys, &meas_sys_test),
        step2: triples(&pred_comp_test, &meas_comp_test),
        combined: triples(&common_pred, &meas_sys_test),
    };
    Ok((SplitReports { step1, step2, combined }, series))
}

/// Train everything on the train window, evaluate all three layers on the
/// test window.
pub fn run_split(dataset: &ReconciledDataset, spec: SplitSpec, config: &TrainConfig) -> Result<SplitReports> {
    let has_points = |w: (i64, i64)| dataset.grid.points().any(|t| t >= w.0 && t < w.1);
    if !has_points(spec.train) {
        return Err(Error::Config(format!("train window {:?} contains no grid points", spec.train)));
    }
    if !has_points(spec.test) {
        return Err(Error::Config(format!("test window {:?} contains no grid points", spec.test)));
    }

    let models = train_models(dataset, spec.train, config)?;
    let (reports, _) = reports_for_models(dataset, &models, spec.test)?;
    Ok(reports)
}
