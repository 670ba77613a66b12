//! Core-space analysis and the per-task learning loop: activation
//! collection, core/residual partitioning, projection-subtraction, PCA
//! filter counting, pruning and retraining.

mod activations;
mod learn;
mod ledger;
mod metrics;
mod selection;

pub use activations::{collect_activations, ActivationMatrix, DEFAULT_ACTIVATION_SAMPLES, MAX_ACTIVATION_ROWS};
pub use learn::{accuracy, learn_task, predictions, train, LayerCounts, LearnConfig, TaskReport, TrainSchedule};
pub use ledger::CoreLedger;
pub use metrics::{network_size_fraction, variance_explained_by_core};
pub use selection::{
    count_filters_first_task, plain_residual_pca, projection_subtraction_pca, ProjectionReport, NEGLIGIBLE_RATIO,
    SCAN_TOLERANCE,
};
