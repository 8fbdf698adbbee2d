//! Per-user job-power models.
//!
//! Users with enough history (at least 1000 training points from at least
//! 100 distinct jobs) get a support vector regression model over the full
//! feature set. Users below the threshold get the Enhanced Average Model,
//! and users with no training data at all fall back to the global average
//! model fitted over everyone's points.

pub mod eam;
pub mod persist;
pub mod svr;

use std::collections::BTreeMap;

pub use eam::{eam_fit, eam_predict, global_eam_fit, EamModel};
pub use svr::{svr_fit, svr_predict, KernelSpec, SvrModel, SvrParams};

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector, NameVocabulary};
use crate::ingest::ReconciledDataset;
use crate::trace::TimeGrid;

/// Minimum training points for the SVR variant.
pub const SVR_MIN_POINTS: usize = 1000;
/// Minimum distinct jobs for the SVR variant.
pub const SVR_MIN_JOBS: usize = 100;

/// One regression sample: features and measured job power at a grid point.
#[derive(Debug, Clone)]
pub struct TrainingPoint {
    pub features: FeatureVector,
    pub target_watts: f64,
    pub job_id: String,
    pub at: i64,
}

/// Which model class a user's data volume selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantTag {
    Svr,
    Eam,
    GlobalEam,
}

/// The exact threshold predicate: SVR needs both enough points and enough
/// distinct jobs; anything else with at least one point is EAM.
pub fn select_variant(n_points: usize, n_jobs: usize) -> VariantTag {
    if n_points >= SVR_MIN_POINTS && n_jobs >= SVR_MIN_JOBS {
        VariantTag::Svr
    } else if n_points >= 1 {
        VariantTag::Eam
    } else {
        VariantTag::GlobalEam
    }
}

#[derive(Debug, Clone)]
pub enum ModelVariant {
    Svr(SvrModel),
    Eam(EamModel),
    /// The user had no training data; carries a copy of the global model so
    /// the predictor is self-contained.
    GlobalEam(EamModel),
}

/// A trained predictor for one user.
#[derive(Debug, Clone)]
pub struct UserModel {
    pub user_id: String,
    pub variant: ModelVariant,
    /// (training points, distinct jobs) behind the variant choice.
    pub training_stats: (usize, usize),
}

impl UserModel {
    pub fn tag(&self) -> VariantTag {
        match self.variant {
            ModelVariant::Svr(_) => VariantTag::Svr,
            ModelVariant::Eam(_) => VariantTag::Eam,
            ModelVariant::GlobalEam(_) => VariantTag::GlobalEam,
        }
    }
}

/// Group training points by the owning user.
pub fn partition_training(
    points: Vec<TrainingPoint>,
    job_user: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, Vec<TrainingPoint>>> {
    let mut groups: BTreeMap<String, Vec<TrainingPoint>> = BTreeMap::new();
    for p in points {
        let user = job_user
            .get(&p.job_id)
            .ok_or_else(|| Error::Consistency(format!("training point references unknown job {}", p.job_id)))?;
        groups.entry(user.clone()).or_default().push(p);
    }
    Ok(groups)
}

/// Number of distinct jobs behind a set of training points.
pub fn distinct_jobs(points: &[TrainingPoint]) -> usize {
    let mut ids: Vec<&str> = points.iter().map(|p| p.job_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.len()
}

/// Pick SVR hyperparameters by validation error on a chronological 80/20
/// split. Ties keep the earliest candidate in the listed order.
pub fn tune_hyperparams(points: &[TrainingPoint], candidates: &[SvrParams]) -> Result<SvrParams> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no hyperparameter candidates".into()));
    }
    if candidates.len() == 1 {
        return Ok(candidates[0].clone());
    }
    if points.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "hyperparameter tuning needs at least 5 points, got {}",
            points.len()
        )));
    }

    let mut ordered: Vec<&TrainingPoint> = points.iter().collect();
    ordered.sort_by(|a, b| (a.at, a.job_id.as_str()).cmp(&(b.at, b.job_id.as_str())));
    let cut = (ordered.len() * 4 / 5).clamp(2, ordered.len() - 1);
    let train: Vec<TrainingPoint> = ordered[..cut].iter().map(|p| (*p).clone()).collect();
    let val = &ordered[cut..];

    let mut best: Option<(f64, usize)> = None;
    for (idx, cand) in candidates.iter().enumerate() {
        let score = match svr_fit(&train, cand) {
            Ok(model) => {
                let mut sq = 0.0;
                let mut mean = 0.0;
                for p in val {
                    let pred = svr_predict(&model, &p.features);
                    sq += (pred - p.target_watts).powi(2);
                    mean += p.target_watts;
                }
                mean /= val.len() as f64;
                if mean > 0.0 {
                    (sq / val.len() as f64).sqrt() / mean
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        };
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, idx));
        }
    }
    Ok(candidates[best.expect("non-empty candidates").1].clone())
}

/// Predict one job's power series over the given grid. SVR re-extracts
/// features per grid point, so collocation changes show up in the series;
/// the average models are constant over the job's lifetime.
pub fn predict_job_series(
    model: &UserModel,
    dataset: &ReconciledDataset,
    job_idx: u32,
    grid: &TimeGrid,
    vocab: &NameVocabulary,
) -> Result<BTreeMap<i64, f64>> {
    let job = dataset.job(job_idx);
    let mut out = BTreeMap::new();
    match &model.variant {
        ModelVariant::Svr(m) => {
            for t in grid.points() {
                if job.active_at(t) && dataset.grid.contains(t) {
                    let f = extract_features(dataset, job_idx, t, vocab)?;
                    out.insert(t, svr_predict(m, &f));
                }
            }
        }
        ModelVariant::Eam(m) | ModelVariant::GlobalEam(m) => {
            let mut cpu = 0u32;
            let mut gpu = 0u32;
            let mut mic = 0u32;
            for a in dataset.allocations_of(job_idx) {
                cpu += a.cpu_cores;
                gpu += a.gpus;
                mic += a.mics;
            }
            let watts = eam_predict(m, cpu, gpu, mic);
            for t in grid.points() {
                if job.active_at(t) && dataset.grid.contains(t) {
                    out.insert(t, watts);
                }
            }
        }
    }
    Ok(out)
}
