//! Task sequences: permuted-pixel, split-class and synthetic
//! controllable-overlap tasks, plus IDX archive ingestion.

mod dataset;
mod generators;
mod idx;

pub use dataset::{BaseDataset, Dataset, Generator, Standardization, TaskSpec, VALIDATION_FRACTION};
pub use generators::{
    apply_permutation, invert_permutation, make_permuted_tasks, make_split_tasks, make_synthetic_tasks,
    make_synthetic_tasks_with, permutation, SyntheticParams,
};
pub use idx::{downsample_mean, ingest_idx, read_idx_images, read_idx_labels, IdxImages};
