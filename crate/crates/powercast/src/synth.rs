//! Synthetic trace generator with known ground truth.
//!
//! The generator emits the four ingestion tables for a small hybrid machine
//! (half the nodes carry GPUs, half MICs) plus the idle table, together with
//! the true per-job power series and the true component and system totals.
//! Per-user job power laws are linear in resource counts, so the average
//! model class is exactly realizable; on corpora rich enough to qualify
//! users for SVR, a third of the users get an extra collocation interaction
//! term that only the SVR features can capture.
//!
//! Placement keeps every CPU socket, GPU and MIC occupied by at most one
//! job at a time (CPU allocations are whole sockets), so apportioning the
//! emitted component power back to jobs reproduces each job's law exactly.
//! Sampling mirrors production traces: one reading per component per grid
//! point, jittered a few seconds around the grid.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::aggregate::IdleTable;
use crate::error::{Error, Result};
use crate::ingest::{assign_slots, AllocationSlice, JobRecord};
use crate::trace::{build_grid, ComponentId, ComponentKind, PowerSample, SampleSource, TimeGrid, Timestamp};

/// Idle draw constants baked into generated traces.
pub const IDLE: IdleTable = IdleTable { cpu: 20.0, gpu: 15.0, mic: 10.0 };

/// Jobs-per-user level at which a corpus is considered rich enough for the
/// SVR variant; collocation interaction terms are only generated then.
pub const COLO_MIN_JOBS_PER_USER: u32 = 100;

const GRID_STEP: i64 = 300;
const NAME_STEMS: [&str; 5] = ["solve", "sim", "mesh", "post", "spectra"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub nodes: u32,
    pub days: u32,
    pub users: u32,
    pub jobs_per_user: u32,
    pub true_system_slope: f64,
    pub true_system_intercept: f64,
    pub noise_rel: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            nodes: 64,
            days: 7,
            users: 10,
            jobs_per_user: 50,
            true_system_slope: 1.5,
            true_system_intercept: 2000.0,
            noise_rel: 0.0,
            seed: 42,
        }
    }
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.nodes > crate::trace::MAX_NODES {
            return Err(Error::Config(format!("nodes must be in 1..={}", crate::trace::MAX_NODES)));
        }
        if self.days == 0 || self.users == 0 {
            return Err(Error::Config("days and users must be positive".into()));
        }
        if self.users > self.nodes {
            return Err(Error::Config(format!(
                "{} users cannot each own a node on a {}-node machine",
                self.users, self.nodes
            )));
        }
        if self.noise_rel < 0.0 || !self.noise_rel.is_finite() {
            return Err(Error::Config("noise_rel must be finite and non-negative".into()));
        }
        if !(self.true_system_slope.is_finite() && self.true_system_intercept.is_finite()) {
            return Err(Error::Config("system law parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn horizon_secs(&self) -> i64 {
        i64::from(self.days) * 86_400
    }
}

/// The four tables plus the idle configuration, in memory.
#[derive(Debug, Clone)]
pub struct SynthTrace {
    pub grid: TimeGrid,
    pub jobs: Vec<JobRecord>,
    pub allocations: Vec<AllocationSlice>,
    pub component_samples: Vec<PowerSample>,
    pub system_samples: Vec<PowerSample>,
    pub idle: IdleTable,
}

/// What the generator knows that the pipeline has to reconstruct.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// True power attributed to each job at each active grid point.
    pub job_power: BTreeMap<(String, i64), f64>,
    /// True computing-component total, before measurement noise.
    pub component_total: BTreeMap<i64, f64>,
    /// True system power `slope * component + intercept`, before noise.
    pub system_clean: BTreeMap<i64, f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Per-user power law: watts per core, per GPU, per MIC, and per
    /// collocated neighbour core.
    pub user_rates: BTreeMap<String, UserRates>,
}

/// Coefficients of one user's generated power law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserRates {
    pub per_cpu_core: f64,
    pub per_gpu: f64,
    pub per_mic: f64,
    pub per_colo_core: f64,
}

struct UserProfile {
    id: String,
    p_cpu: f64,
    p_gpu: f64,
    p_mic: f64,
    colo_coef: f64,
    names: Vec<String>,
    nodes: Vec<u32>,
}

struct PlacedJob {
    record: JobRecord,
    user: usize,
    slices: Vec<AllocationSlice>,
}

pub fn generate(spec: &GeneratorSpec) -> Result<(SynthTrace, GroundTruth)> {
    spec.validate()?;
    let horizon = spec.horizon_secs();
    let grid = build_grid(Timestamp::new(0)?, Timestamp::new(horizon - GRID_STEP)?, GRID_STEP)?;
    let tpoints: Vec<i64> = grid.points().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // First half of the machine carries GPUs, second half MICs, so
    // round-robin node ownership gives most users a mix of both.
    let is_gpu_node = |n: u32| n < spec.nodes / 2 || spec.nodes == 1;

    let users: Vec<UserProfile> = (0..spec.users)
        .map(|u| {
            let p_cpu = rng.gen_range(4.0..12.0);
            let p_gpu = rng.gen_range(30.0..90.0);
            let p_mic = rng.gen_range(25.0..70.0);
            let colo_coef = if spec.jobs_per_user >= COLO_MIN_JOBS_PER_USER && u % 3 == 2 {
                rng.gen_range(0.5..1.5)
            } else {
                0.0
            };
            let n_names = rng.gen_range(3..=NAME_STEMS.len());
            UserProfile {
                id: format!("u{u:03}"),
                p_cpu,
                p_gpu,
                p_mic,
                colo_coef,
                names: NAME_STEMS[..n_names].iter().map(|s| s.to_string()).collect(),
                nodes: (0..spec.nodes).filter(|n| n % spec.users == u).collect(),
            }
        })
        .collect();

    // Per-node, per-grid-point committed (cores, gpus, mics).
    let mut usage: Vec<Vec<[u32; 3]>> = vec![vec![[0u32; 3]; tpoints.len()]; spec.nodes as usize];
    let idx_of = |t: i64| (t / GRID_STEP) as usize;
    let ceil_to_grid = |t: i64| (t + GRID_STEP - 1) / GRID_STEP * GRID_STEP;

    let mut placed: Vec<PlacedJob> = Vec::new();
    for (ui, user) in users.iter().enumerate() {
        for k in 0..spec.jobs_per_user {
            let job_id = format!("j{ui:03}_{k:05}");
            let name = user.names[rng.gen_range(0..user.names.len())].clone();

            let kind_draw: f64 = rng.gen();
            let wants_gpu = kind_draw < 0.26;
            let wants_mic = (0.26..0.28).contains(&kind_draw);

            let duration = rng.gen_range(6..=24) * 600; // 1 h .. 4 h
            let n_nodes = if rng.gen_bool(0.15) { 2usize } else { 1 };
            let sockets_per_node = if rng.gen_bool(0.25) { 2u32 } else { 1 };
            let devices = if wants_gpu || wants_mic { rng.gen_range(1..=2u32) } else { 0 };

            // Diurnal arrivals: midday starts are far more likely, which
            // gives the machine a strong day/night load swing.
            let latest = horizon - GRID_STEP - duration;
            if latest <= 0 {
                continue;
            }
            let mut start = rng.gen_range(0..=latest) / 60 * 60;
            for _ in 0..40 {
                let phase = (start % 86_400) as f64 / 86_400.0 * std::f64::consts::TAU;
                let accept = 0.12 + 0.88 * (0.5 - 0.5 * phase.cos());
                if rng.gen_bool(accept.clamp(0.0, 1.0)) {
                    break;
                }
                start = rng.gen_range(0..=latest) / 60 * 60;
            }

            // Candidate nodes: accelerator jobs are pinned to matching nodes.
            let pool: Vec<u32> = user
                .nodes
                .iter()
                .copied()
                .filter(|&n| {
                    if wants_gpu {
                        is_gpu_node(n)
                    } else if wants_mic {
                        !is_gpu_node(n)
                    } else {
                        true
                    }
                })
                .collect();
            let (pool, devices) = if pool.is_empty() { (user.nodes.clone(), 0) } else { (pool, devices) };
            let n_nodes = n_nodes.min(pool.len());

            // Shift in half-hour steps, wrapping around the horizon, until
            // the nodes have room over the whole run.
            let mut chosen: Option<(i64, Vec<u32>)> = None;
            let offset = rng.gen_range(0..pool.len());
            let shift_slots = (latest / 1800 + 1).min(500);
            'shift: for attempt in 0..=shift_slots {
                let s = (start + attempt * 1800) % (latest + 1);
                let nodes: Vec<u32> = (0..n_nodes).map(|i| pool[(offset + i) % pool.len()]).collect();
                let lo = idx_of(ceil_to_grid(s).min(horizon - GRID_STEP));
                let hi = idx_of(s + duration);
                let fits = nodes.iter().all(|&n| {
                    usage[n as usize][lo..=hi].iter().all(|&[c, g, m]| {
                        c + sockets_per_node * 8 <= 16
                            && (!wants_gpu || g + devices <= 2)
                            && (!wants_mic || m + devices <= 2)
                    })
                });
                if fits {
                    chosen = Some((s, nodes));
                    break 'shift;
                }
            }
            let Some((start, nodes)) = chosen else { continue };
            let end = start + duration;

            let mut slices = Vec::new();
            for (i, &node) in nodes.iter().enumerate() {
                // accelerator devices land on the first node only
                let (gpus, mics) = if i == 0 && wants_gpu {
                    (devices, 0)
                } else if i == 0 && wants_mic {
                    (0, devices)
                } else {
                    (0, 0)
                };
                slices.push(AllocationSlice {
                    job_id: job_id.clone(),
                    node,
                    cpu_cores: sockets_per_node * 8,
                    gpus,
                    mics,
                });
                let lo = idx_of(ceil_to_grid(start).min(horizon - GRID_STEP));
                let hi = idx_of(end);
                for slot in &mut usage[node as usize][lo..=hi] {
                    slot[0] += sockets_per_node * 8;
                    slot[1] += if i == 0 && wants_gpu { devices } else { 0 };
                    slot[2] += if i == 0 && wants_mic { devices } else { 0 };
                }
            }

            placed.push(PlacedJob {
                record: JobRecord {
                    job_id,
                    user_id: user.id.clone(),
                    job_name: name,
                    start: Timestamp::new(start)?,
                    end: Timestamp::new(end)?,
                },
                user: ui,
                slices,
            });
        }
    }

    // Activity per grid point.
    let mut active_at: Vec<Vec<u32>> = vec![Vec::new(); tpoints.len()];
    for (ji, job) in placed.iter().enumerate() {
        let lo = idx_of(ceil_to_grid(job.record.start.secs()).min(horizon - GRID_STEP));
        let hi = idx_of(job.record.end.secs().min(horizon - GRID_STEP));
        for slot in active_at.iter_mut().take(hi + 1).skip(lo) {
            slot.push(ji as u32);
        }
    }

    // True job power at every active grid point, with the collocation term.
    let mut job_power: BTreeMap<(String, i64), f64> = BTreeMap::new();
    for (k, &t) in tpoints.iter().enumerate() {
        for &ji in &active_at[k] {
            let job = &placed[ji as usize];
            let user = &users[job.user];
            let own_cpu: u32 = job.slices.iter().map(|s| s.cpu_cores).sum();
            let own_gpu: u32 = job.slices.iter().map(|s| s.gpus).sum();
            let own_mic: u32 = job.slices.iter().map(|s| s.mics).sum();
            let mut colo_cpu = 0u32;
            if user.colo_coef > 0.0 {
                for &other in &active_at[k] {
                    if other == ji {
                        continue;
                    }
                    for s in &placed[other as usize].slices {
                        if job.slices.iter().any(|mine| mine.node == s.node) {
                            colo_cpu += s.cpu_cores;
                        }
                    }
                }
            }
            let watts = user.p_cpu * f64::from(own_cpu)
                + user.p_gpu * f64::from(own_gpu)
                + user.p_mic * f64::from(own_mic)
                + user.colo_coef * f64::from(colo_cpu);
            job_power.insert((job.record.job_id.clone(), t), watts);
        }
    }

    // Emit component samples: per grid point, each occupied slot carries its
    // occupant's share of the job law, each free slot idles.
    let mut component_samples = Vec::new();
    let mut system_samples = Vec::new();
    let mut component_total = BTreeMap::new();
    let mut system_clean = BTreeMap::new();
    let noise = |rng: &mut ChaCha8Rng| -> f64 {
        if spec.noise_rel == 0.0 {
            1.0
        } else {
            let z: f64 = rng.sample(StandardNormal);
            (1.0 + spec.noise_rel * z).max(0.0)
        }
    };

    for (k, &t) in tpoints.iter().enumerate() {
        let mut total_clean = 0.0;
        for node in 0..spec.nodes {
            // occupants per kind on this node
            let mut slot_power: BTreeMap<ComponentId, f64> = BTreeMap::new();
            for kind in ComponentKind::ALL {
                if kind == ComponentKind::Gpu && !is_gpu_node(node) {
                    continue;
                }
                if kind == ComponentKind::Mic && is_gpu_node(node) {
                    continue;
                }
                let occupants: Vec<(u32, u32)> = active_at[k]
                    .iter()
                    .filter_map(|&ji| {
                        let units: u32 = placed[ji as usize]
                            .slices
                            .iter()
                            .filter(|s| s.node == node)
                            .map(|s| s.units_of(kind))
                            .sum();
                        (units > 0).then_some((ji, units))
                    })
                    .collect();
                for share in assign_slots(kind, &occupants)? {
                    let comp = ComponentId::new(node, kind, share.slot)?;
                    let job = &placed[share.job as usize];
                    let per_slot = job_slot_share(job, &users[job.user], &job_power, t, node, kind, share.units);
                    *slot_power.entry(comp).or_insert(0.0) += per_slot;
                }
                for slot in 0..2u8 {
                    let comp = ComponentId::new(node, kind, slot)?;
                    slot_power.entry(comp).or_insert(IDLE.get(kind));
                }
            }
            for (comp, clean) in slot_power {
                total_clean += clean;
                let jitter = rng.gen_range(-4..=5i64);
                let watts = clean * noise(&mut rng);
                component_samples.push(PowerSample {
                    at: Timestamp::new((t + jitter).max(0))?,
                    watts,
                    source: SampleSource::Component(comp),
                });
            }
        }
        component_total.insert(t, total_clean);
        let clean_sys = spec.true_system_slope * total_clean + spec.true_system_intercept;
        system_clean.insert(t, clean_sys);
        let jitter = rng.gen_range(-4..=5i64);
        system_samples.push(PowerSample {
            at: Timestamp::new((t + jitter).max(0))?,
            watts: clean_sys * noise(&mut rng),
            source: SampleSource::SystemMeter,
        });
    }

    let trace = SynthTrace {
        grid,
        jobs: placed.iter().map(|p| p.record.clone()).collect(),
        allocations: placed.iter().flat_map(|p| p.slices.iter().cloned()).collect(),
        component_samples,
        system_samples,
        idle: IDLE,
    };
    let truth = GroundTruth {
        job_power,
        component_total,
        system_clean,
        slope: spec.true_system_slope,
        intercept: spec.true_system_intercept,
        user_rates: users
            .iter()
            .map(|u| {
                (
                    u.id.clone(),
                    UserRates {
                        per_cpu_core: u.p_cpu,
                        per_gpu: u.p_gpu,
                        per_mic: u.p_mic,
                        per_colo_core: u.colo_coef,
                    },
                )
            })
            .collect(),
    };
    Ok((trace, truth))
}

/// The portion of a job's law carried by `units` on one slot of (node,
/// kind): the per-unit base rate, plus, on CPU slots, an equal share of the
/// collocation term per allocated core.
fn job_slot_share(
    job: &PlacedJob,
    user: &UserProfile,
    job_power: &BTreeMap<(String, i64), f64>,
    t: i64,
    _node: u32,
    kind: ComponentKind,
    units: u32,
) -> f64 {
    let own_cpu: u32 = job.slices.iter().map(|s| s.cpu_cores).sum();
    let own_gpu: u32 = job.slices.iter().map(|s| s.gpus).sum();
    let own_mic: u32 = job.slices.iter().map(|s| s.mics).sum();
    let total = job_power[&(job.record.job_id.clone(), t)];
    let base = user.p_cpu * f64::from(own_cpu) + user.p_gpu * f64::from(own_gpu) + user.p_mic * f64::from(own_mic);
    let colo_term = total - base;
    match kind {
        ComponentKind::CpuSocket => {
            // the collocation surcharge rides on the CPU cores
            (user.p_cpu + colo_term / f64::from(own_cpu)) * f64::from(units)
        }
        ComponentKind::Gpu => user.p_gpu * f64::from(units),
        ComponentKind::Mic => user.p_mic * f64::from(units),
    }
}

/// A monitoring-failure scenario: the system meter drifts away from the
/// linear relation over `drift_lead` seconds, then everything goes dark at
/// `outage_at`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub outage_at: i64,
    pub drift_lead: i64,
    pub drift_magnitude: f64,
}

pub fn inject_fault(mut trace: SynthTrace, fault: &FaultSpec) -> Result<SynthTrace> {
    let (lo, hi) = (trace.grid.start().secs(), trace.grid.end().secs());
    if fault.outage_at < lo || fault.outage_at > hi {
        return Err(Error::Range(format!(
            "outage at {} outside the trace window [{lo}, {hi}]",
            fault.outage_at
        )));
    }
    if fault.drift_lead < 0 || fault.drift_magnitude < 0.0 {
        return Err(Error::Range("drift lead and magnitude must be non-negative".into()));
    }

    let onset = fault.outage_at - fault.drift_lead;
    for s in &mut trace.system_samples {
        let t = s.at.secs();
        if fault.drift_lead > 0 && t >= onset && t < fault.outage_at {
            let progress = (t - onset) as f64 / fault.drift_lead as f64;
            s.watts *= 1.0 + fault.drift_magnitude * progress;
        }
    }
    trace.system_samples.retain(|s| s.at.secs() < fault.outage_at);
    trace.component_samples.retain(|s| s.at.secs() < fault.outage_at);

    let mut jobs = Vec::new();
    let mut keep: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for mut job in trace.jobs {
        if job.start.secs() >= fault.outage_at {
            continue;
        }
        if job.end.secs() >= fault.outage_at {
            job.end = Timestamp::new(fault.outage_at - 1)?;
        }
        keep.insert(job.job_id.clone());
        jobs.push(job);
    }
    trace.jobs = jobs;
    trace.allocations.retain(|a| keep.contains(&a.job_id));
    Ok(trace)
}

impl SynthTrace {
    /// Render the five output files as (name, contents) pairs.
    pub fn render_files(&self) -> Vec<(&'static str, String)> {
        let mut jobs = String::from("job_id,user_id,job_name,start_ts,end_ts\n");
        for j in &self.jobs {
            jobs.push_str(&format!("{},{},{},{},{}\n", j.job_id, j.user_id, j.job_name, j.start, j.end));
        }
        let mut allocations = String::from("job_id,node,cpu_cores,gpus,mics\n");
        for a in &self.allocations {
            allocations.push_str(&format!("{},{},{},{},{}\n", a.job_id, a.node, a.cpu_cores, a.gpus, a.mics));
        }
        let mut component = String::from("node,kind,slot,ts,watts\n");
        for s in &self.component_samples {
            let SampleSource::Component(c) = s.source else { continue };
            component.push_str(&format!("{},{},{},{},{}\n", c.node, c.kind.token(), c.slot, s.at, s.watts));
        }
        let mut system = String::from("ts,watts\n");
        for s in &self.system_samples {
            system.push_str(&format!("{},{}\n", s.at, s.watts));
        }
        let idle = format!("CPU={}\nGPU={}\nMIC={}\n", self.idle.cpu, self.idle.gpu, self.idle.mic);
        vec![
            ("jobs.csv", jobs),
            ("allocations.csv", allocations),
            ("component_power.csv", component),
            ("system_power.csv", system),
            ("idle.cfg", idle),
        ]
    }

    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        for (name, contents) in self.render_files() {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| Error::Io { path, source: e })?;
        }
        Ok(())
    }

    /// Reconcile this trace the way the ingest pipeline would.
    pub fn reconcile(&self) -> Result<crate::ingest::ReconciledDataset> {
        crate::ingest::reconcile(
            self.jobs.clone(),
            self.allocations.clone(),
            &self.component_samples,
            &self.system_samples,
            self.grid,
            self.idle,
        )
    }
}
