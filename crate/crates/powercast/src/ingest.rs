//! Loading of the four input tables, trace correction, and per-job power
//! targets.
//!
//! Raw monitoring data is inconsistent: nodes disappear from the logs,
//! individual component daemons skip readings, and the system meter has its
//! own gaps. [`reconcile`] applies the correction rules in order, per node
//! and grid point:
//!
//! 1. no measurement of any kind and no job activity: the node is down and
//!    its components draw nothing;
//! 2. the node is up but a component reading is missing and no job occupies
//!    the component: the reading is substituted with the idle value;
//! 3. a job occupies the component and the reading is missing: the power
//!    cannot be estimated, so the grid point is dropped from machine-level
//!    series and the affected jobs lose their target there.
//!
//! [`compute_job_power`] then apportions each component's measured power to
//! the jobs occupying it, proportionally to allocated units, which yields
//! the regression targets for the job-power models.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use crate::aggregate::IdleTable;
use crate::error::{Error, Result};
use crate::trace::{self, ComponentId, ComponentKind, PowerSample, SampleSource, TimeGrid, Timestamp};

/// A job's identity, owner and lifetime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobRecord {
    pub job_id: String,
    pub user_id: String,
    pub job_name: String,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl JobRecord {
    pub fn active_at(&self, t: i64) -> bool {
        self.start.secs() <= t && t <= self.end.secs()
    }
}

/// Resources a job holds on one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationSlice {
    pub job_id: String,
    pub node: u32,
    pub cpu_cores: u32,
    pub gpus: u32,
    pub mics: u32,
}

impl AllocationSlice {
    pub fn units_of(&self, kind: ComponentKind) -> u32 {
        match kind {
            ComponentKind::CpuSocket => self.cpu_cores,
            ComponentKind::Gpu => self.gpus,
            ComponentKind::Mic => self.mics,
        }
    }
}

/// Node condition at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeState {
    /// No measurement of any kind and no job activity; power treated as zero.
    Down,
    /// Up with no active job on the node.
    Idle,
    /// Up with at least one active job.
    Active,
}

/// Units of one job placed on one slot of a (node, kind).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotShare {
    pub job: u32,
    pub slot: u8,
    pub units: u32,
}

/// Deterministic placement of allocated units onto the two slots of one
/// (node, kind). Allocations carry per-node unit counts only, so occupants
/// are laid out in ascending job order, filling slot 0 to capacity before
/// slot 1. Jobs may span both slots.
pub fn assign_slots(kind: ComponentKind, occupants: &[(u32, u32)]) -> Result<Vec<SlotShare>> {
    let cap = kind.units_per_slot();
    let total: u32 = occupants.iter().map(|&(_, u)| u).sum();
    if total > 2 * cap {
        return Err(Error::Consistency(format!(
            "allocated {total} {} units on one node, capacity is {}",
            kind.token(),
            2 * cap
        )));
    }
    let mut sorted: Vec<(u32, u32)> = occupants.iter().copied().filter(|&(_, u)| u > 0).collect();
    sorted.sort_by_key(|&(job, _)| job);

    let mut shares = Vec::new();
    let mut filled = 0u32;
    for (job, units) in sorted {
        let mut left = units;
        while left > 0 {
            let slot = (filled / cap) as u8;
            let space = cap - filled % cap;
            let take = left.min(space);
            shares.push(SlotShare { job, slot, units: take });
            filled += take;
            left -= take;
        }
    }
    Ok(shares)
}

/// The cleaned dataset: reconciled component and system power on the grid,
/// plus the workload tables and everything dropped along the way.
#[derive(Debug, Clone)]
pub struct ReconciledDataset {
    pub grid: TimeGrid,
    pub idle: IdleTable,
    /// Reconciled component power. Down components are absent (they draw 0);
    /// entries exist for measured or idle-substituted components, including
    /// at grid points that were dropped because of some other component.
    pub component_power: BTreeMap<(i64, ComponentId), f64>,
    /// System meter readings aligned to the grid, dropped points removed.
    pub system_power: BTreeMap<i64, f64>,
    pub jobs: Vec<JobRecord>,
    pub allocations: Vec<AllocationSlice>,
    /// Grid points excluded from machine-level series, with the reason.
    pub dropped_points: Vec<(i64, String)>,
    pub node_status: BTreeMap<(i64, u32), NodeState>,
    /// All nodes ever observed in allocations or component measurements.
    pub nodes: BTreeSet<u32>,

    job_index: BTreeMap<String, u32>,
    allocs_by_job: Vec<Vec<u32>>,
    active_at: BTreeMap<i64, Vec<u32>>,
    dropped_ts: BTreeSet<i64>,
    dropped_components: BTreeSet<(i64, ComponentId)>,
    inventory: BTreeMap<u32, Vec<ComponentId>>,
}

impl ReconciledDataset {
    pub fn job(&self, idx: u32) -> &JobRecord {
        &self.jobs[idx as usize]
    }

    pub fn job_idx(&self, job_id: &str) -> Option<u32> {
        self.job_index.get(job_id).copied()
    }

    pub fn allocations_of(&self, job: u32) -> impl Iterator<Item = &AllocationSlice> {
        self.allocs_by_job[job as usize].iter().map(|&a| &self.allocations[a as usize])
    }

    /// Indices of jobs active at grid point `t`, ascending.
    pub fn active_jobs(&self, t: i64) -> &[u32] {
        self.active_at.get(&t).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn is_dropped(&self, t: i64) -> bool {
        self.dropped_ts.contains(&t)
    }

    pub fn component_dropped(&self, t: i64, comp: ComponentId) -> bool {
        self.dropped_components.contains(&(t, comp))
    }

    /// Components present on a node (derived from measurements and
    /// allocations; CPU sockets are always present).
    pub fn inventory(&self, node: u32) -> &[ComponentId] {
        self.inventory.get(&node).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn node_state(&self, t: i64, node: u32) -> NodeState {
        self.node_status.get(&(t, node)).copied().unwrap_or(NodeState::Down)
    }

    /// Slot layout of the jobs occupying `kind` units on `node` at `t`.
    pub fn occupancy(&self, t: i64, node: u32, kind: ComponentKind) -> Result<Vec<SlotShare>> {
        let occupants: Vec<(u32, u32)> = self
            .active_jobs(t)
            .iter()
            .filter_map(|&j| {
                let units: u32 = self
                    .allocations_of(j)
                    .filter(|a| a.node == node)
                    .map(|a| a.units_of(kind))
                    .sum();
                (units > 0).then_some((j, units))
            })
            .collect();
        assign_slots(kind, &occupants)
    }
}

#[derive(Debug, Deserialize)]
struct JobRow {
    job_id: String,
    user_id: String,
    job_name: String,
    start_ts: i64,
    end_ts: i64,
}

#[derive(Debug, Deserialize)]
struct AllocationRow {
    job_id: String,
    node: u32,
    cpu_cores: u32,
    gpus: u32,
    mics: u32,
}

#[derive(Debug, Deserialize)]
struct ComponentPowerRow {
    node: u32,
    kind: String,
    slot: u8,
    ts: i64,
    watts: f64,
}

#[derive(Debug, Deserialize)]
struct SystemPowerRow {
    ts: i64,
    watts: f64,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            },
            _ => parse_err(path, 1, &e.to_string()),
        })
}

fn parse_err(path: &Path, row: usize, message: &str) -> Error {
    Error::Parse { path: path.to_path_buf(), row, message: message.to_string() }
}

/// Load jobs.csv (`job_id,user_id,job_name,start_ts,end_ts`).
pub fn load_jobs(path: &Path) -> Result<Vec<JobRecord>> {
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, row) in rdr.deserialize::<JobRow>().enumerate() {
        let line = i + 2; // 1-based, after the header
        let row = row.map_err(|e| parse_err(path, line, &e.to_string()))?;
        if row.end_ts < row.start_ts {
            return Err(parse_err(path, line, &format!("job {} ends before it starts", row.job_id)));
        }
        if !seen.insert(row.job_id.clone()) {
            return Err(parse_err(path, line, &format!("duplicate job_id {}", row.job_id)));
        }
        out.push(JobRecord {
            job_id: row.job_id,
            user_id: row.user_id,
            job_name: row.job_name,
            start: Timestamp::new(row.start_ts).map_err(|e| parse_err(path, line, &e.to_string()))?,
            end: Timestamp::new(row.end_ts).map_err(|e| parse_err(path, line, &e.to_string()))?,
        });
    }
    Ok(out)
}

/// Load allocations.csv (`job_id,node,cpu_cores,gpus,mics`).
pub fn load_allocations(path: &Path) -> Result<Vec<AllocationSlice>> {
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, row) in rdr.deserialize::<AllocationRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, &e.to_string()))?;
        if row.node >= trace::MAX_NODES {
            return Err(parse_err(path, line, &format!("node {} outside machine range", row.node)));
        }
        if row.cpu_cores > 16 {
            return Err(parse_err(path, line, &format!("{} cores exceed the 16-core node", row.cpu_cores)));
        }
        if row.gpus > 2 || row.mics > 2 {
            return Err(parse_err(path, line, "more than 2 accelerator devices on one node"));
        }
        if row.cpu_cores == 0 && row.gpus == 0 && row.mics == 0 {
            return Err(parse_err(path, line, "allocation uses no resources"));
        }
        if !seen.insert((row.job_id.clone(), row.node)) {
            return Err(parse_err(path, line, &format!("duplicate allocation for job {} on node {}", row.job_id, row.node)));
        }
        out.push(AllocationSlice {
            job_id: row.job_id,
            node: row.node,
            cpu_cores: row.cpu_cores,
            gpus: row.gpus,
            mics: row.mics,
        });
    }
    Ok(out)
}

/// Load component_power.csv (`node,kind(CPU|GPU|MIC),slot(0|1),ts,watts`).
/// Duplicate (component, timestamp) rows keep the last occurrence.
pub fn load_component_power(path: &Path) -> Result<Vec<PowerSample>> {
    let mut rdr = csv_reader(path)?;
    let mut dedup: BTreeMap<(ComponentId, i64), f64> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<ComponentPowerRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, &e.to_string()))?;
        let kind = ComponentKind::parse_token(&row.kind)
            .ok_or_else(|| parse_err(path, line, &format!("unknown component kind {}", row.kind)))?;
        let comp = ComponentId::new(row.node, kind, row.slot).map_err(|e| parse_err(path, line, &e.to_string()))?;
        if !row.watts.is_finite() || row.watts < 0.0 {
            return Err(parse_err(path, line, &format!("invalid power {}", row.watts)));
        }
        if row.ts < 0 {
            return Err(parse_err(path, line, &format!("negative timestamp {}", row.ts)));
        }
        dedup.insert((comp, row.ts), row.watts);
    }
    Ok(dedup
        .into_iter()
        .map(|((comp, ts), watts)| PowerSample {
            at: Timestamp::new(ts).expect("validated above"),
            watts,
            source: SampleSource::Component(comp),
        })
        .collect())
}

/// Load system_power.csv (`ts,watts`). Duplicate timestamps keep the last row.
pub fn load_system_power(path: &Path) -> Result<Vec<PowerSample>> {
    let mut rdr = csv_reader(path)?;
    let mut dedup: BTreeMap<i64, f64> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<SystemPowerRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, &e.to_string()))?;
        if !row.watts.is_finite() || row.watts < 0.0 {
            return Err(parse_err(path, line, &format!("invalid power {}", row.watts)));
        }
        if row.ts < 0 {
            return Err(parse_err(path, line, &format!("negative timestamp {}", row.ts)));
        }
        dedup.insert(row.ts, row.watts);
    }
    Ok(dedup
        .into_iter()
        .map(|(ts, watts)| PowerSample {
            at: Timestamp::new(ts).expect("validated above"),
            watts,
            source: SampleSource::SystemMeter,
        })
        .collect())
}

/// Load idle.cfg (`CPU=<watts>`, `GPU=<watts>`, `MIC=<watts>`).
pub fn load_idle_table(path: &Path) -> Result<IdleTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut cpu = None;
    let mut gpu = None;
    let mut mic = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected KEY=value", path.display(), i + 1)))?;
        let watts: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{}:{}: bad wattage {value}", path.display(), i + 1)))?;
        if !watts.is_finite() || watts < 0.0 {
            return Err(Error::Config(format!("{}:{}: idle power must be non-negative", path.display(), i + 1)));
        }
        match key.trim() {
            "CPU" => cpu = Some(watts),
            "GPU" => gpu = Some(watts),
            "MIC" => mic = Some(watts),
            other => return Err(Error::Config(format!("{}:{}: unknown component {other}", path.display(), i + 1))),
        }
    }
    match (cpu, gpu, mic) {
        (Some(cpu), Some(gpu), Some(mic)) => Ok(IdleTable { cpu, gpu, mic }),
        _ => Err(Error::Config(format!("{}: idle table must define CPU, GPU and MIC", path.display()))),
    }
}

/// Apply the correction rules and assemble the reconciled dataset.
pub fn reconcile(
    jobs: Vec<JobRecord>,
    allocations: Vec<AllocationSlice>,
    component_samples: &[PowerSample],
    system_samples: &[PowerSample],
    grid: TimeGrid,
    idle: IdleTable,
) -> Result<ReconciledDataset> {
    // Job and allocation indices.
    let mut job_index = BTreeMap::new();
    for (i, j) in jobs.iter().enumerate() {
        if job_index.insert(j.job_id.clone(), i as u32).is_some() {
            return Err(Error::Consistency(format!("duplicate job_id {}", j.job_id)));
        }
    }
    let mut allocs_by_job = vec![Vec::new(); jobs.len()];
    for (i, a) in allocations.iter().enumerate() {
        let &job = job_index
            .get(&a.job_id)
            .ok_or_else(|| Error::Consistency(format!("allocation references unknown job {}", a.job_id)))?;
        allocs_by_job[job as usize].push(i as u32);
    }

    // Node universe and per-node component inventory. CPU sockets are always
    // present; accelerators are added when either a measurement or an
    // allocation gives evidence of them.
    let mut nodes: BTreeSet<u32> = BTreeSet::new();
    let mut has_kind: BTreeSet<(u32, ComponentKind)> = BTreeSet::new();
    for s in component_samples {
        if let SampleSource::Component(c) = s.source {
            nodes.insert(c.node);
            has_kind.insert((c.node, c.kind));
        }
    }
    for a in &allocations {
        nodes.insert(a.node);
        if a.gpus > 0 {
            has_kind.insert((a.node, ComponentKind::Gpu));
        }
        if a.mics > 0 {
            has_kind.insert((a.node, ComponentKind::Mic));
        }
    }
    let mut inventory: BTreeMap<u32, Vec<ComponentId>> = BTreeMap::new();
    for &node in &nodes {
        let mut comps = Vec::new();
        for kind in ComponentKind::ALL {
            let present = kind == ComponentKind::CpuSocket || has_kind.contains(&(node, kind));
            if present {
                for slot in 0..2u8 {
                    comps.push(ComponentId::new(node, kind, slot)?);
                }
            }
        }
        inventory.insert(node, comps);
    }

    // Align every component's samples to the grid.
    let mut per_component: BTreeMap<ComponentId, Vec<PowerSample>> = BTreeMap::new();
    for s in component_samples {
        if let SampleSource::Component(c) = s.source {
            per_component.entry(c).or_default().push(*s);
        }
    }
    let mut aligned: BTreeMap<ComponentId, BTreeMap<i64, PowerSample>> = BTreeMap::new();
    for (comp, samples) in &per_component {
        aligned.insert(*comp, trace::align_to_grid(samples, &grid));
    }

    // Job activity per grid point.
    let mut active_at: BTreeMap<i64, Vec<u32>> = BTreeMap::new();
    let step = grid.step();
    let gstart = grid.start().secs();
    let gend = grid.end().secs();
    for (i, job) in jobs.iter().enumerate() {
        let lo = job.start.secs().max(gstart);
        let hi = job.end.secs().min(gend);
        if lo > hi {
            continue;
        }
        let first = gstart + (lo - gstart + step - 1) / step * step;
        let mut t = first;
        while t <= hi {
            active_at.entry(t).or_default().push(i as u32);
            t += step;
        }
    }

    // Per node and grid point: apply correction rules in order.
    let mut component_power: BTreeMap<(i64, ComponentId), f64> = BTreeMap::new();
    let mut node_status: BTreeMap<(i64, u32), NodeState> = BTreeMap::new();
    let mut dropped_points: Vec<(i64, String)> = Vec::new();
    let mut dropped_ts: BTreeSet<i64> = BTreeSet::new();
    let mut dropped_components: BTreeSet<(i64, ComponentId)> = BTreeSet::new();

    for t in grid.points() {
        let empty = Vec::new();
        let active = active_at.get(&t).unwrap_or(&empty);
        for (&node, comps) in &inventory {
            // Units allocated on this node at t, per kind.
            let mut occupants: BTreeMap<ComponentKind, Vec<(u32, u32)>> = BTreeMap::new();
            let mut any_activity = false;
            for &j in active {
                for &ai in &allocs_by_job[j as usize] {
                    let a = &allocations[ai as usize];
                    if a.node != node {
                        continue;
                    }
                    any_activity = true;
                    for kind in ComponentKind::ALL {
                        let units = a.units_of(kind);
                        if units > 0 {
                            occupants.entry(kind).or_default().push((j, units));
                        }
                    }
                }
            }

            let any_measurement = comps.iter().any(|c| aligned.get(c).is_some_and(|m| m.contains_key(&t)));
            if !any_measurement && !any_activity {
                node_status.insert((t, node), NodeState::Down);
                continue;
            }
            node_status.insert((t, node), if any_activity { NodeState::Active } else { NodeState::Idle });

            // Per-slot occupied units.
            let mut occupied_slots: BTreeSet<ComponentId> = BTreeSet::new();
            for (&kind, occ) in &occupants {
                for share in assign_slots(kind, occ)? {
                    occupied_slots.insert(ComponentId::new(node, kind, share.slot)?);
                }
            }

            for &comp in comps {
                let measured = aligned.get(&comp).and_then(|m| m.get(&t));
                match measured {
                    Some(s) => {
                        component_power.insert((t, comp), s.watts);
                    }
                    None if !occupied_slots.contains(&comp) => {
                        component_power.insert((t, comp), idle.get(comp.kind));
                    }
                    None => {
                        dropped_points.push((t, format!("{comp} occupied but unmeasured")));
                        dropped_ts.insert(t);
                        dropped_components.insert((t, comp));
                    }
                }
            }
        }
    }

    // System meter alignment; dropped grid points are excluded from the
    // system-level series but kept for component-level work.
    let mut system_power: BTreeMap<i64, f64> = trace::align_to_grid(system_samples, &grid)
        .into_iter()
        .map(|(t, s)| (t, s.watts))
        .collect();
    system_power.retain(|t, _| !dropped_ts.contains(t));

    Ok(ReconciledDataset {
        grid,
        idle,
        component_power,
        system_power,
        jobs,
        allocations,
        dropped_points,
        node_status,
        nodes,
        job_index,
        allocs_by_job,
        active_at,
        dropped_ts,
        dropped_components,
        inventory,
    })
}

/// Per-job power targets: each occupied component's reconciled power is
/// split among its occupants proportionally to allocated units (cores for
/// CPU sockets, devices for accelerators). The occupants absorb the
/// component's full draw, idle portion included, which keeps the machine
/// total conserved. A job with any occupied component unmeasured at `t`
/// yields no target at `t`.
pub fn compute_job_power(dataset: &ReconciledDataset) -> Result<BTreeMap<(u32, i64), f64>> {
    let mut out: BTreeMap<(u32, i64), f64> = BTreeMap::new();
    let mut tainted: BTreeSet<(u32, i64)> = BTreeSet::new();

    for t in dataset.grid.points() {
        for &node in &dataset.nodes {
            if dataset.node_state(t, node) != NodeState::Active {
                continue;
            }
            for kind in ComponentKind::ALL {
                let shares = dataset.occupancy(t, node, kind)?;
                if shares.is_empty() {
                    continue;
                }
                for slot in 0..2u8 {
                    let on_slot: Vec<&SlotShare> = shares.iter().filter(|s| s.slot == slot).collect();
                    if on_slot.is_empty() {
                        continue;
                    }
                    let comp = ComponentId::new(node, kind, slot)?;
                    if dataset.component_dropped(t, comp) {
                        for s in &on_slot {
                            tainted.insert((s.job, t));
                        }
                        continue;
                    }
                    let power = *dataset.component_power.get(&(t, comp)).ok_or_else(|| {
                        Error::Consistency(format!("occupied component {comp} has no reconciled power at {t}"))
                    })?;
                    let total_units: u32 = on_slot.iter().map(|s| s.units).sum();
                    for s in &on_slot {
                        *out.entry((s.job, t)).or_insert(0.0) += power * f64::from(s.units) / f64::from(total_units);
                    }
                }
            }
        }
    }

    for key in tainted {
        out.remove(&key);
    }
    Ok(out)
}
