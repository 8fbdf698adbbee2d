//! End-to-end glue: train every model layer on a window, predict job power
//! for the whole dataset, and persist or reload a model directory.

use std::collections::BTreeMap;
use std::path::Path;

use crate::aggregate::{self, ComponentPowerSeries};
use crate::error::{Error, Result};
use crate::evaluate::{nrmse, window_values};
use crate::features::NameVocabulary;
use crate::ingest::{compute_job_power, ReconciledDataset};
use crate::jobpower::{
    self, distinct_jobs, eam_fit, global_eam_fit, partition_training, persist, select_variant, svr_fit,
    tune_hyperparams, EamModel, KernelSpec, ModelVariant, SvrParams, TrainingPoint, UserModel, VariantTag,
};
use crate::syslayer::{self, fit_linear, SystemLinearModel, SystemPowerSeries, SystemProvenance};

/// Kernel family used for the SVR candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelChoice {
    Rbf,
    Linear,
}

/// Training knobs, normally parsed from the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub svr_c: Vec<f64>,
    pub svr_epsilon: Vec<f64>,
    /// Multipliers of the conventional gamma = 1/dims default.
    pub svr_gamma_scale: Vec<f64>,
    pub svr_kernel: KernelChoice,
    pub svr_kkt_tol: f64,
    pub svr_max_passes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            svr_c: vec![1.0, 10.0, 100.0],
            svr_epsilon: vec![0.5, 2.0],
            svr_gamma_scale: vec![0.1, 1.0, 10.0],
            svr_kernel: KernelChoice::Rbf,
            svr_kkt_tol: jobpower::svr::DEFAULT_KKT_TOL,
            svr_max_passes: jobpower::svr::DEFAULT_MAX_PASSES,
        }
    }
}

impl TrainConfig {
    /// Cartesian candidate list in a fixed order (C, then epsilon, then
    /// gamma), which also fixes the tuning tie-break.
    pub fn candidates(&self, input_dims: usize) -> Vec<SvrParams> {
        let mut out = Vec::new();
        for &c in &self.svr_c {
            for &eps in &self.svr_epsilon {
                match self.svr_kernel {
                    KernelChoice::Linear => {
                        out.push(self.params(c, eps, KernelSpec::Linear));
                    }
                    KernelChoice::Rbf => {
                        for &scale in &self.svr_gamma_scale {
                            let gamma = scale * jobpower::svr::default_gamma(input_dims);
                            out.push(self.params(c, eps, KernelSpec::Rbf { gamma }));
                        }
                    }
                }
            }
        }
        out
    }

    fn params(&self, c: f64, epsilon: f64, kernel: KernelSpec) -> SvrParams {
        SvrParams { c, epsilon, kernel, kkt_tol: self.svr_kkt_tol, max_passes: self.svr_max_passes }
    }
}

/// Everything `cmd_train` produces.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub users: BTreeMap<String, UserModel>,
    pub global: EamModel,
    pub lm: SystemLinearModel,
    pub vocab: NameVocabulary,
    pub train_window: (i64, i64),
    /// Step-1 NRMSE over the training window, the baseline for anomaly
    /// thresholds.
    pub train_nrmse: f64,
}

/// Train per-user job models, the global average model, and the linear
/// system layer, using only grid points inside the half-open window.
pub fn train_models(dataset: &ReconciledDataset, window: (i64, i64), config: &TrainConfig) -> Result<TrainedModels> {
    let in_window = |t: i64| t >= window.0 && t < window.1;

    // Job-name vocabulary, first-seen chronological order over the window.
    let mut vocab = NameVocabulary::new();
    for t in dataset.grid.points().filter(|&t| in_window(t)) {
        for &j in dataset.active_jobs(t) {
            let job = dataset.job(j);
            vocab.observe(&job.user_id, &job.job_name);
        }
    }

    // Regression targets inside the window.
    let targets = compute_job_power(dataset)?;
    let mut points: Vec<TrainingPoint> = Vec::new();
    for (&(j, t), &watts) in &targets {
        if !in_window(t) {
            continue;
        }
        let features = crate::features::extract_features(dataset, j, t, &vocab)?;
        points.push(TrainingPoint {
            features,
            target_watts: watts,
            job_id: dataset.job(j).job_id.clone(),
            at: t,
        });
    }

    let global = global_eam_fit(&points)?;

    let job_user: BTreeMap<String, String> =
        dataset.jobs.iter().map(|j| (j.job_id.clone(), j.user_id.clone())).collect();
    let groups = partition_training(points, &job_user)?;

    let mut users = BTreeMap::new();
    for (user_id, pts) in groups {
        let n_points = pts.len();
        let n_jobs = distinct_jobs(&pts);
        let variant = match select_variant(n_points, n_jobs) {
            VariantTag::Svr => {
                let dims = jobpower::svr::expanded_dims(&pts);
                let chosen = tune_hyperparams(&pts, &config.candidates(dims))?;
                ModelVariant::Svr(svr_fit(&pts, &chosen)?)
            }
            VariantTag::Eam => ModelVariant::Eam(eam_fit(&pts, &global)?),
            VariantTag::GlobalEam => ModelVariant::GlobalEam(global),
        };
        users.insert(
            user_id.clone(),
            UserModel { user_id, variant, training_stats: (n_points, n_jobs) },
        );
    }

    // Linear system layer, fitted on measured series over the same window.
    let measured_comp = aggregate::measured_component_series(dataset);
    let comp_train = ComponentPowerSeries {
        grid: dataset.grid,
        values: window_values(&measured_comp.values, window),
        provenance: measured_comp.provenance,
    };
    let sys_train = SystemPowerSeries {
        values: window_values(&dataset.system_power, window),
        provenance: SystemProvenance::Measured,
    };
    let lm = fit_linear(&comp_train, &sys_train)?;

    let est_train: BTreeMap<i64, f64> = comp_train.values.iter().map(|(&t, &x)| (t, lm.apply(x))).collect();
    let train_nrmse = nrmse(&est_train, &sys_train.values)?;

    Ok(TrainedModels { users, global, lm, vocab, train_window: window, train_nrmse })
}

/// Predict the power series of every job over the full dataset grid. Users
/// without a trained model fall back to the global average model.
pub fn predict_all_jobs(dataset: &ReconciledDataset, models: &TrainedModels) -> Result<BTreeMap<u32, BTreeMap<i64, f64>>> {
    let mut out = BTreeMap::new();
    for (idx, job) in dataset.jobs.iter().enumerate() {
        let idx = idx as u32;
        let fallback;
        let model = match models.users.get(&job.user_id) {
            Some(m) => m,
            None => {
                fallback = UserModel {
                    user_id: job.user_id.clone(),
                    variant: ModelVariant::GlobalEam(models.global),
                    training_stats: (0, 0),
                };
                &fallback
            }
        };
        let series = jobpower::predict_job_series(model, dataset, idx, &dataset.grid, &models.vocab)?;
        out.insert(idx, series);
    }
    Ok(out)
}

pub const MODELS_SUBDIR: &str = "models";
const GLOBAL_FILE: &str = "global.model";
const LM_FILE: &str = "system.lm";
const META_FILE: &str = "training.meta";
const SUMMARY_FILE: &str = "summary.csv";

/// Write the trained bundle under `<out_dir>/models/`.
pub fn save_models(out_dir: &Path, models: &TrainedModels) -> Result<()> {
    let dir = out_dir.join(MODELS_SUBDIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;

    for (user_id, model) in &models.users {
        let entries = models.vocab.entries_for(user_id);
        persist::save_user_model(&dir.join(persist::model_file_name(user_id)), model, &entries)?;
    }
    let global_model = UserModel {
        user_id: "__global__".into(),
        variant: ModelVariant::GlobalEam(models.global),
        training_stats: (0, 0),
    };
    persist::save_user_model(&dir.join(GLOBAL_FILE), &global_model, &[])?;
    syslayer::save_linear_model(&dir.join(LM_FILE), &models.lm)?;

    let meta = format!(
        "train_start={}\ntrain_end={}\ntrain_nrmse={}\n",
        models.train_window.0, models.train_window.1, models.train_nrmse
    );
    let meta_path = dir.join(META_FILE);
    std::fs::write(&meta_path, meta).map_err(|e| Error::Io { path: meta_path.clone(), source: e })?;

    let mut summary = String::from("user_id,variant,n_points,n_jobs\n");
    for (user_id, model) in &models.users {
        let variant = match model.tag() {
            VariantTag::Svr => "svr",
            VariantTag::Eam => "eam",
            VariantTag::GlobalEam => "global_eam",
        };
        summary.push_str(&format!(
            "{user_id},{variant},{},{}\n",
            model.training_stats.0, model.training_stats.1
        ));
    }
    let summary_path = dir.join(SUMMARY_FILE);
    std::fs::write(&summary_path, summary).map_err(|e| Error::Io { path: summary_path, source: e })
}

/// Reload a model directory written by [`save_models`].
pub fn load_models(out_dir: &Path) -> Result<TrainedModels> {
    let dir = out_dir.join(MODELS_SUBDIR);
    if !dir.is_dir() {
        return Err(Error::Usage(format!(
            "no trained models at {}: run the train command first",
            dir.display()
        )));
    }

    let mut users = BTreeMap::new();
    let mut vocab = NameVocabulary::new();
    let mut entries: Vec<std::path::PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::Io { path: dir.clone(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if !name.starts_with("user_") || !name.ends_with(".model") {
            continue;
        }
        let (model, vocab_entries) = persist::load_user_model(&path)?;
        vocab.insert_user(&model.user_id, vocab_entries);
        users.insert(model.user_id.clone(), model);
    }

    let (global_model, _) = persist::load_user_model(&dir.join(GLOBAL_FILE))?;
    let ModelVariant::GlobalEam(global) = global_model.variant else {
        return Err(Error::Consistency("global model file does not hold a global average model".into()));
    };
    let lm = syslayer::load_linear_model(&dir.join(LM_FILE))?;

    let meta_path = dir.join(META_FILE);
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::Io { path: meta_path.clone(), source: e })?;
    let mut train_start = None;
    let mut train_end = None;
    let mut train_nrmse = None;
    for line in meta.lines() {
        match line.split_once('=') {
            Some(("train_start", v)) => train_start = v.parse::<i64>().ok(),
            Some(("train_end", v)) => train_end = v.parse::<i64>().ok(),
            Some(("train_nrmse", v)) => train_nrmse = v.parse::<f64>().ok(),
            _ => {}
        }
    }
    let (Some(start), Some(end), Some(train_nrmse)) = (train_start, train_end, train_nrmse) else {
        return Err(Error::Parse { path: meta_path, row: 0, message: "incomplete training metadata".into() });
    };

    Ok(TrainedModels { users, global, lm, vocab, train_window: (start, end), train_nrmse })
}

/// Export a power series as the `ts,watts` CSV format.
pub fn write_series_csv(path: &Path, series: &BTreeMap<i64, f64>) -> Result<()> {
    let mut out = String::from("ts,watts\n");
    for (t, w) in series {
        out.push_str(&format!("{t},{w}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}
