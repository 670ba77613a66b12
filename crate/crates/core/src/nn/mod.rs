//! Minimal trainable network: dense and convolutional layers with ReLU,
//! max-pooling and dropout, SGD with momentum, per-filter ownership
//! (core / current / free), causal input masks and one classifier head per
//! task.
//!
//! Pruning is logical. Tensors keep their full size and freed filters are
//! zeroed, so a task's inference mask reproduces exactly the network that
//! was trained for it.

mod arch;
mod checkpoint;
mod conv;
mod layer;
mod network;

pub use arch::{Architecture, InputShape, LayerGeometry, LayerKind, LayerSpec};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use layer::{derive_rng, Head, LayerState, Ownership};
pub use network::{ForwardPass, Gradients, LayerCache, Mode, Network, SgdStep};
