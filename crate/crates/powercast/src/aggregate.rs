//! Machine-level computing power series: the measured total across all
//! components, and the predicted total built from per-job predictions plus
//! idle draw.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ingest::{NodeState, ReconciledDataset};
use crate::trace::{ComponentKind, TimeGrid};

/// Idle draw per component type, in watts. Measured once per type on the
/// real machine; supplied via configuration here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdleTable {
    pub cpu: f64,
    pub gpu: f64,
    pub mic: f64,
}

impl IdleTable {
    pub fn get(&self, kind: ComponentKind) -> f64 {
        match kind {
            ComponentKind::CpuSocket => self.cpu,
            ComponentKind::Gpu => self.gpu,
            ComponentKind::Mic => self.mic,
        }
    }
}

/// Whether a series was measured or built from model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Measured,
    Predicted,
}

/// Total computing-component power per grid point.
#[derive(Debug, Clone)]
pub struct ComponentPowerSeries {
    pub grid: TimeGrid,
    pub values: BTreeMap<i64, f64>,
    pub provenance: Provenance,
}

/// Sum of all reconciled component power per grid point. Down nodes
/// contribute zero; dropped grid points are excluded entirely.
pub fn measured_component_series(dataset: &ReconciledDataset) -> ComponentPowerSeries {
    let mut values = BTreeMap::new();
    for t in dataset.grid.points() {
        if dataset.is_dropped(t) {
            continue;
        }
        let total: f64 = dataset
            .component_power
            .range((t, min_component())..=(t, max_component()))
            .map(|(_, &w)| w)
            .sum();
        values.insert(t, total);
    }
    ComponentPowerSeries { grid: dataset.grid, values, provenance: Provenance::Measured }
}

fn min_component() -> crate::trace::ComponentId {
    crate::trace::ComponentId { node: 0, kind: ComponentKind::CpuSocket, slot: 0 }
}

fn max_component() -> crate::trace::ComponentId {
    crate::trace::ComponentId { node: u32::MAX, kind: ComponentKind::Mic, slot: u8::MAX }
}

/// Idle draw at `t`: the configured idle wattage of every component that is
/// powered on (its node is not down) and allocated to no job. Partially
/// occupied components contribute nothing; their residual draw belongs to
/// the occupying jobs by the target-construction convention.
pub fn idle_power(t: i64, dataset: &ReconciledDataset, idle: &IdleTable) -> Result<f64> {
    let mut total = 0.0;
    for &node in &dataset.nodes {
        if dataset.node_state(t, node) == NodeState::Down {
            continue;
        }
        for kind in ComponentKind::ALL {
            let comps = dataset.inventory(node).iter().filter(|c| c.kind == kind).count();
            if comps == 0 {
                continue;
            }
            let occupied: std::collections::BTreeSet<u8> =
                dataset.occupancy(t, node, kind)?.iter().map(|s| s.slot).collect();
            total += idle.get(kind) * (comps - occupied.len()) as f64;
        }
    }
    Ok(total)
}

/// Predicted computing power per grid point: the sum of per-job predictions
/// plus idle draw of unallocated components. The domain matches the measured
/// series (dropped points excluded) so the two are directly comparable.
pub fn predicted_component_series(
    job_predictions: &BTreeMap<u32, BTreeMap<i64, f64>>,
    dataset: &ReconciledDataset,
    idle: &IdleTable,
) -> Result<ComponentPowerSeries> {
    let mut values = BTreeMap::new();
    for t in dataset.grid.points() {
        if dataset.is_dropped(t) {
            continue;
        }
        let mut total = idle_power(t, dataset, idle)?;
        for &j in dataset.active_jobs(t) {
            let series = job_predictions.get(&j).ok_or_else(|| {
                Error::Consistency(format!("no prediction series for active job {}", dataset.job(j).job_id))
            })?;
            if let Some(&w) = series.get(&t) {
                total += w;
            }
        }
        values.insert(t, total);
    }
    Ok(ComponentPowerSeries { grid: dataset.grid, values, provenance: Provenance::Predicted })
}
