use std::io;

use thiserror::Error;

/// Errors raised by the numerical kernels, the network stack and the
/// task generators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix dimensions {rows}x{cols} do not match data length {len}")]
    BadShape { rows: usize, cols: usize, len: usize },

    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric: |G[{i},{j}] - G[{j},{i}]| = {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },

    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },

    #[error("need at least 2 samples to estimate variance, got {0}")]
    TooFewSamples(usize),

    #[error("variance threshold {0} is outside (0, 100]")]
    BadThreshold(f64),

    #[error("layer {layer} has no residual filters left (resource exhausted)")]
    ResourceExhausted { layer: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no classifier head registered for task {0}")]
    NoHead(u32),

    #[error("a classifier head is already registered for task {0}")]
    DuplicateHead(u32),

    #[error("layer {layer}: requested {requested} filters but {core} are already frozen")]
    BelowCore { layer: usize, requested: usize, core: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("bad IDX magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
