//! Per-job regression features at one grid point.
//!
//! A job is described by its own resources (cores, GPUs, MICs, node count),
//! its job name, and the resources held at the same time by other jobs on
//! the nodes it shares. The collocation counts are what lets the regression
//! capture power interference between neighbouring jobs.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ingest::ReconciledDataset;

/// Reserved job-name code for names unseen at training time.
pub const UNKNOWN_NAME: usize = usize::MAX;

/// Regression inputs for one job at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureVector {
    pub job_name_code: usize,
    pub own_cpu_cores: u32,
    pub own_gpus: u32,
    pub own_mics: u32,
    pub own_nodes: u32,
    pub colo_cpu_cores: u32,
    pub colo_gpus: u32,
    pub colo_mics: u32,
}

impl FeatureVector {
    /// The numeric (non-categorical) dimensions, in a fixed order.
    pub fn numeric(&self) -> [f64; 7] {
        [
            f64::from(self.own_cpu_cores),
            f64::from(self.own_gpus),
            f64::from(self.own_mics),
            f64::from(self.own_nodes),
            f64::from(self.colo_cpu_cores),
            f64::from(self.colo_gpus),
            f64::from(self.colo_mics),
        ]
    }

    pub const NUMERIC_DIMS: usize = 7;
}

/// Per-user job-name dictionaries, frozen at training time. Unseen names
/// map to the reserved unknown code at prediction time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameVocabulary {
    per_user: BTreeMap<String, BTreeMap<String, usize>>,
}

impl NameVocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a name for a user, assigning codes in first-seen order.
    pub fn observe(&mut self, user_id: &str, job_name: &str) -> usize {
        let names = self.per_user.entry(user_id.to_string()).or_default();
        let next = names.len();
        *names.entry(job_name.to_string()).or_insert(next)
    }

    /// Stable code for a (user, name) pair; `UNKNOWN_NAME` when unseen.
    pub fn encode(&self, user_id: &str, job_name: &str) -> usize {
        self.per_user
            .get(user_id)
            .and_then(|names| names.get(job_name))
            .copied()
            .unwrap_or(UNKNOWN_NAME)
    }

    /// Number of distinct names seen for a user.
    pub fn len_for(&self, user_id: &str) -> usize {
        self.per_user.get(user_id).map_or(0, |n| n.len())
    }

    /// Sorted (name, code) pairs for one user, for persistence.
    pub fn entries_for(&self, user_id: &str) -> Vec<(String, usize)> {
        self.per_user
            .get(user_id)
            .map(|names| names.iter().map(|(n, &c)| (n.clone(), c)).collect())
            .unwrap_or_default()
    }

    /// Rebuild one user's dictionary from persisted (name, code) pairs.
    pub fn insert_user(&mut self, user_id: &str, entries: Vec<(String, usize)>) {
        self.per_user.insert(user_id.to_string(), entries.into_iter().collect());
    }
}

/// Stable categorical code for a job name under a frozen vocabulary.
pub fn encode_job_name(user_id: &str, job_name: &str, vocabulary: &NameVocabulary) -> usize {
    vocabulary.encode(user_id, job_name)
}

/// Extract the feature vector of a job at grid point `t`. The job must be
/// active at `t`; collocation counts cover resources of other active jobs on
/// the nodes this job occupies, and only on those nodes.
pub fn extract_features(
    dataset: &ReconciledDataset,
    job_idx: u32,
    t: i64,
    vocabulary: &NameVocabulary,
) -> Result<FeatureVector> {
    let job = dataset.job(job_idx);
    if !job.active_at(t) {
        return Err(Error::Precondition(format!("job {} is not active at {t}", job.job_id)));
    }

    let mut own_cpu = 0u32;
    let mut own_gpu = 0u32;
    let mut own_mic = 0u32;
    let mut own_nodes: BTreeSet<u32> = BTreeSet::new();
    for a in dataset.allocations_of(job_idx) {
        own_cpu += a.cpu_cores;
        own_gpu += a.gpus;
        own_mic += a.mics;
        own_nodes.insert(a.node);
    }

    let mut colo_cpu = 0u32;
    let mut colo_gpu = 0u32;
    let mut colo_mic = 0u32;
    for &other in dataset.active_jobs(t) {
        if other == job_idx {
            continue;
        }
        for a in dataset.allocations_of(other) {
            if own_nodes.contains(&a.node) {
                colo_cpu += a.cpu_cores;
                colo_gpu += a.gpus;
                colo_mic += a.mics;
            }
        }
    }

    Ok(FeatureVector {
        job_name_code: vocabulary.encode(&job.user_id, &job.job_name),
        own_cpu_cores: own_cpu,
        own_gpus: own_gpu,
        own_mics: own_mic,
        own_nodes: own_nodes.len() as u32,
        colo_cpu_cores: colo_cpu,
        colo_gpus: colo_gpu,
        colo_mics: colo_mic,
    })
}
