use log::{debug, info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::activations::{collect_activations, DEFAULT_ACTIVATION_SAMPLES};
use super::ledger::CoreLedger;
use super::metrics::network_size_fraction;
use super::selection::{plain_residual_pca, projection_subtraction_pca, ProjectionReport};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nn::{derive_rng, Network, SgdStep};
use crate::tasks::{Dataset, TaskSpec};

const SHUFFLE_SLOT: u64 = 0x5F0;
const DROPOUT_BASE: u64 = 0xD0;
const ACTIVATION_SEED_MIX: u64 = 0xAC71;

/// SGD schedule of one phase (initial training or retraining).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub lr: f64,
    /// Epochs (0-based) at whose start the learning rate drops.
    #[serde(default)]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_decay() -> f64 {
    10.0
}

fn default_momentum() -> f64 {
    0.9
}

fn default_batch() -> usize {
    128
}

impl TrainSchedule {
    pub fn new(epochs: usize, lr: f64) -> Self {
        Self {
            epochs,
            lr,
            decay_epochs: Vec::new(),
            decay_factor: default_decay(),
            momentum: default_momentum(),
            batch_size: default_batch(),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr / self.decay_factor.powi(drops as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.decay_factor <= 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("bad learning rate, decay factor or momentum".into()));
        }
        Ok(())
    }
}

/// Everything [`learn_task`] needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    /// Variance threshold (percent) per feature layer.
    pub thresholds: Vec<f64>,
    pub activation_samples: usize,
    pub disable_projection_subtraction: bool,
    pub seed: u64,
    pub train: TrainSchedule,
    pub retrain: TrainSchedule,
}

impl LearnConfig {
    pub fn new(thresholds: Vec<f64>, train: TrainSchedule, retrain: TrainSchedule, seed: u64) -> Self {
        Self {
            thresholds,
            activation_samples: DEFAULT_ACTIVATION_SAMPLES,
            disable_projection_subtraction: false,
            seed,
            train,
            retrain,
        }
    }
}

/// Per-layer filter bookkeeping of one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounts {
    /// Core filters before the task.
    pub f: usize,
    /// Filters added by the task.
    pub l: usize,
    /// Residual filters available to the task.
    pub r: usize,
}

/// What happened while learning one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: u32,
    pub counts: Vec<LayerCounts>,
    /// `None` for layers that had no residual filters left.
    pub projections: Vec<Option<ProjectionReport>>,
    pub exhausted_layers: Vec<usize>,
    pub train_loss: f64,
    pub retrain_loss: f64,
    /// Test accuracy (%) of this task right after retraining.
    pub test_accuracy: f64,
    pub validation_accuracy: f64,
    pub network_size_fraction: f64,
}

/// Learns the next task: train with the core frozen, analyse activations,
/// freeze the selected filters, free the rest, retrain once.
pub fn learn_task(net: &mut Network, ledger: &mut CoreLedger, spec: &TaskSpec, config: &LearnConfig) -> Result<TaskReport> {
    let task = ledger.n_tasks() as u32 + 1;
    if spec.task_id != task {
        return Err(Error::InvalidArgument(format!("expected task {task}, got task {}", spec.task_id)));
    }
    if config.thresholds.len() != net.n_layers() {
        return Err(Error::DimensionMismatch(format!(
            "{} thresholds for {} layers",
            config.thresholds.len(),
            net.n_layers()
        )));
    }
    config.train.validate()?;
    config.retrain.validate()?;
    if ledger.widths() != net.widths().as_slice() {
        return Err(Error::DimensionMismatch("ledger and network widths differ".into()));
    }

    net.begin_task(task);
    let widths = net.widths();
    net.add_head(task, widths[widths.len() - 1], spec.n_classes)?;
    let train_loss = train(net, &spec.train, task, &config.train, config.seed, 0)?;
    info!("task {task}: trained, loss {train_loss:.4}");

    let mask = net.active_mask();
    let acts = collect_activations(
        net,
        &spec.train.x,
        task,
        &mask,
        config.activation_samples,
        config.seed ^ ACTIVATION_SEED_MIX,
    )?;
    let before = ledger.core_counts(task - 1);
    let mut counts = Vec::with_capacity(widths.len());
    let mut projections = Vec::with_capacity(widths.len());
    let mut exhausted = Vec::new();
    for (l, a) in acts.iter().enumerate() {
        let f = before[l];
        let x = config.thresholds[l];
        let analysis = if config.disable_projection_subtraction {
            plain_residual_pca(a, f, x)
        } else {
            projection_subtraction_pca(a, f, x)
        };
        match analysis {
            Ok(rep) => {
                debug!("task {task} layer {l}: f={f} r={} selected={} x'0={:.4}", rep.r, rep.selected, rep.x_start);
                counts.push(LayerCounts { f, l: rep.selected, r: rep.r });
                projections.push(Some(rep));
            }
            Err(Error::ResourceExhausted { layer }) => {
                warn!("task {task}: layer {layer} has no residual filters left");
                exhausted.push(layer);
                counts.push(LayerCounts { f, l: 0, r: 0 });
                projections.push(None);
            }
            Err(e) => return Err(e),
        }
    }

    let new_counts: Vec<usize> = counts.iter().map(|c| c.f + c.l).collect();
    net.prune_and_reinit(&new_counts, task)?;
    net.narrow_head(task, new_counts[new_counts.len() - 1])?;
    let retrain_loss = train(net, &spec.train, task, &config.retrain, config.seed, 1)?;
    ledger.push(new_counts)?;
    info!("task {task}: retrained, loss {retrain_loss:.4}, core {:?}", ledger.core_counts(task));

    Ok(TaskReport {
        task,
        counts,
        projections,
        exhausted_layers: exhausted,
        train_loss,
        retrain_loss,
        test_accuracy: accuracy(net, task, &spec.test)?,
        validation_accuracy: accuracy(net, task, &spec.validation)?,
        network_size_fraction: network_size_fraction(net.architecture(), ledger, task)?,
    })
}

/// Runs one phase of SGD; returns the mean loss of the last epoch.
pub fn train(net: &mut Network, data: &Dataset, task: u32, schedule: &TrainSchedule, seed: u64, phase: u64) -> Result<f64> {
    net.reset_optimizer();
    let mut rng = derive_rng(seed, task, SHUFFLE_SLOT + phase);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last = f64::NAN;
    let mut step_index = 0u64;
    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for batch in order.chunks(schedule.batch_size) {
            let x = data.x.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let dropout_seed = seed ^ ((task as u64) << 40) ^ ((DROPOUT_BASE + phase) << 32) ^ step_index;
            let loss = net.backward_sgd_step(&x, &y, task, SgdStep { lr, momentum: schedule.momentum, dropout_seed })?;
            if !loss.is_finite() {
                return Err(Error::InvalidArgument(format!("training diverged at task {task}, epoch {epoch}")));
            }
            total += loss * batch.len() as f64;
            seen += batch.len();
            step_index += 1;
        }
        last = total / seen as f64;
        debug!("task {task} phase {phase} epoch {epoch}: lr {lr}, loss {last:.4}");
    }
    Ok(last)
}

/// Percentage of `data` classified correctly with task `task`'s mask and head.
pub fn accuracy(net: &Network, task: u32, data: &Dataset) -> Result<f64> {
    let correct = predictions(net, task, &data.x)?.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    Ok(100.0 * correct as f64 / data.len() as f64)
}

pub fn predictions(net: &Network, task: u32, x: &DenseMatrix) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(x.rows());
    let rows: Vec<usize> = (0..x.rows()).collect();
    for chunk in rows.chunks(512) {
        let logits = net.predict(&x.select_rows(chunk), task)?;
        for r in 0..logits.rows() {
            let row = logits.row(r);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            out.push(best);
        }
    }
    Ok(out)
}
