//! Foundational time and component identity types, plus alignment of raw
//! high-frequency power samples onto a fixed evaluation grid.
//!
//! All series in the pipeline live on a [`TimeGrid`] (5-minute step by
//! default). Raw samples arrive at higher and irregular rates; for each grid
//! point `t` we keep the sample inside `[t-4, t+5]` seconds that is closest
//! to `t`, or nothing if the window is empty.

use crate::error::{Error, Result};

/// Default grid step in seconds (5 minutes).
pub const DEFAULT_GRID_STEP: i64 = 300;

/// Inclusive lower bound of the alignment window relative to a grid point.
pub const ALIGN_WINDOW_BEFORE: i64 = 4;
/// Inclusive upper bound of the alignment window relative to a grid point.
pub const ALIGN_WINDOW_AFTER: i64 = 5;

/// Largest machine supported: node identifiers are `0..MAX_NODES`.
pub const MAX_NODES: u32 = 64;

/// Integer seconds since the epoch. Sub-second precision is out of scope;
/// monitoring data arrives at 5-second resolution at best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub fn new(secs: i64) -> Result<Self> {
        if secs < 0 {
            return Err(Error::Range(format!("negative timestamp {secs}")));
        }
        Ok(Timestamp(secs))
    }

    pub fn secs(self) -> i64 {
        self.0
    }
}

impl std::fmt::Display for Timestamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The three computing component types present in the machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ComponentKind {
    CpuSocket,
    Gpu,
    Mic,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 3] = [ComponentKind::CpuSocket, ComponentKind::Gpu, ComponentKind::Mic];

    /// Allocatable units per slot: cores for a CPU socket, one device for
    /// accelerators.
    pub fn units_per_slot(self) -> u32 {
        match self {
            ComponentKind::CpuSocket => 8,
            ComponentKind::Gpu | ComponentKind::Mic => 1,
        }
    }

    /// Token used in the component power CSV schema.
    pub fn token(self) -> &'static str {
        match self {
            ComponentKind::CpuSocket => "CPU",
            ComponentKind::Gpu => "GPU",
            ComponentKind::Mic => "MIC",
        }
    }

    pub fn parse_token(s: &str) -> Option<ComponentKind> {
        match s {
            "CPU" => Some(ComponentKind::CpuSocket),
            "GPU" => Some(ComponentKind::Gpu),
            "MIC" => Some(ComponentKind::Mic),
            _ => None,
        }
    }
}

/// One physical component: a CPU socket, GPU or MIC in a given slot of a
/// node. Each node carries two CPU sockets and either two GPUs or two MICs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentId {
    pub node: u32,
    pub kind: ComponentKind,
    pub slot: u8,
}

impl ComponentId {
    pub fn new(node: u32, kind: ComponentKind, slot: u8) -> Result<Self> {
        if node >= MAX_NODES {
            return Err(Error::Range(format!("node {node} outside machine range 0..{MAX_NODES}")));
        }
        if slot > 1 {
            return Err(Error::Range(format!("slot {slot} outside {{0,1}}")));
        }
        Ok(ComponentId { node, kind, slot })
    }
}

impl std::fmt::Display for ComponentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "node{}/{}{}", self.node, self.kind.token(), self.slot)
    }
}

/// Origin of a power sample: a single component or the machine-level meter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSource {
    Component(ComponentId),
    SystemMeter,
}

/// A timestamped power reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSample {
    pub at: Timestamp,
    pub watts: f64,
    pub source: SampleSource,
}

impl PowerSample {
    pub fn new(at: Timestamp, watts: f64, source: SampleSource) -> Result<Self> {
        if !watts.is_finite() || watts < 0.0 {
            return Err(Error::InvalidInput(format!("power must be finite and non-negative, got {watts}")));
        }
        Ok(PowerSample { at, watts, source })
    }
}

/// A fixed-step evaluation lattice covering `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    start: Timestamp,
    end: Timestamp,
    step: i64,
}

impl TimeGrid {
    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn end(&self) -> Timestamp {
        self.end
    }

    pub fn step(&self) -> i64 {
        self.step
    }

    /// Number of grid points (`start + k*step <= end`).
    pub fn len(&self) -> usize {
        ((self.end.secs() - self.start.secs()) / self.step) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false // start < end is an invariant, so there is always at least one point
    }

    /// Iterate over grid points in seconds, ascending.
    pub fn points(&self) -> impl Iterator<Item = i64> + '_ {
        let step = self.step;
        let start = self.start.secs();
        (0..self.len() as i64).map(move |k| start + k * step)
    }

    pub fn contains(&self, t: i64) -> bool {
        t >= self.start.secs() && t <= self.end.secs() && (t - self.start.secs()) % self.step == 0
    }
}

/// Build the evaluation grid over `[start, end]` with the given step.
pub fn build_grid(start: Timestamp, end: Timestamp, step_secs: i64) -> Result<TimeGrid> {
    if start >= end {
        return Err(Error::Range(format!(
            "grid start {} must precede end {}",
            start.secs(),
            end.secs()
        )));
    }
    if step_secs <= 0 {
        return Err(Error::Range(format!("grid step must be positive, got {step_secs}")));
    }
    Ok(TimeGrid { start, end, step: step_secs })
}

/// Align raw samples to a grid: for each grid point `t`, pick the sample with
/// timestamp in `[t-4, t+5]` that minimizes `|timestamp - t|`. Ties at equal
/// distance go to the earlier sample. Grid points with an empty window are
/// absent from the result.
pub fn align_to_grid(samples: &[PowerSample], grid: &TimeGrid) -> std::collections::BTreeMap<i64, PowerSample> {
    let mut sorted: Vec<&PowerSample> = samples.iter().collect();
    sorted.sort_by_key(|s| s.at.secs());

    let mut out = std::collections::BTreeMap::new();
    let mut lo = 0usize;
    for t in grid.points() {
        let win_lo = t - ALIGN_WINDOW_BEFORE;
        let win_hi = t + ALIGN_WINDOW_AFTER;
        while lo < sorted.len() && sorted[lo].at.secs() < win_lo {
            lo += 1;
        }
        let mut best: Option<&PowerSample> = None;
        for s in &sorted[lo..] {
            if s.at.secs() > win_hi {
                break;
            }
            let better = match best {
                None => true,
                // Strict < keeps the earlier sample on equal distance because
                // candidates are scanned in ascending timestamp order.
                Some(b) => (s.at.secs() - t).abs() < (b.at.secs() - t).abs(),
            };
            if better {
                best = Some(s);
            }
        }
        if let Some(s) = best {
            out.insert(t, *s);
        }
    }
    out
}
