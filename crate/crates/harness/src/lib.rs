//! Config-driven experiment runner for the core-space continual learner:
//! task sequences in, per-task records, filter tables, snapshots and
//! replay fixtures out.

pub mod ablate;
pub mod calibrate;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod report;
pub mod verify;

pub use ablate::{ablate_compare, Comparison};
pub use calibrate::{probe_thresholds, stl_reference, StlResult, ThresholdProbe};
pub use config::{ExperimentConfig, TaskSource, OUTPUT_DIR_ENV};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, run_tasks, RunOutcome, RunSummary, TaskRecord};
pub use fixtures::FixtureSet;
pub use report::{report, ReportFormat};
pub use verify::{verify_checkpoint, VerifyReport};
