//! Workload-driven system-level power prediction for hybrid CPU/GPU/MIC
//! clusters.
//!
//! The pipeline has two model layers. Per-user job-power models (support
//! vector regression where enough history exists, per-component averages
//! otherwise) predict each job's draw from workload features alone. Summing
//! job predictions with the idle draw of unallocated components gives the
//! predicted computing power, and a linear system layer maps computing power
//! to total machine power as measured at the electric panel. A rolling-window
//! fit monitor turns degradation of the system layer into failure alarms.
//!
//! Modules follow the data path:
//! - [`trace`]: time grid and alignment of raw samples.
//! - [`ingest`]: CSV loading, trace correction rules, per-job power targets.
//! - [`features`]: per-job regression features including collocation counts.
//! - [`jobpower`]: per-user SVR / enhanced-average job models.
//! - [`aggregate`]: computing-component power series (measured and predicted).
//! - [`syslayer`]: the linear component-to-system model.
//! - [`evaluate`]: NRMSE / R-squared metrics and the train/test protocol.
//! - [`anomaly`]: rolling-window fit monitoring and down-node alarms.
//! - [`synth`]: synthetic trace generator with known ground truth.

pub mod aggregate;
pub mod anomaly;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod ingest;
pub mod jobpower;
pub mod pipeline;
pub mod synth;
pub mod syslayer;
pub mod trace;

pub use error::{Error, Result};
