//! Single-task reference runs used to pick variance thresholds.

use serde::{Deserialize, Serialize};
use space_core::nn::{Mode, Network};
use space_core::space::{learn_task, train, CoreLedger};
use space_core::tasks::{Dataset, TaskSpec};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// One task learned by a fresh, unpruned network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StlResult {
    pub task: u32,
    pub test_accuracy: f64,
    pub train_loss: f64,
}

/// Learning one task alone at the given thresholds, with pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProbe {
    pub thresholds: Vec<f64>,
    pub test_accuracy: f64,
    pub network_size_fraction: f64,
    pub core_counts: Vec<usize>,
}

/// Trains a full-width network on each task independently with the config's
/// training schedule (no freezing, no pruning) and reports test accuracy.
pub fn stl_reference(cfg: &ExperimentConfig, tasks: &[TaskSpec]) -> Result<Vec<StlResult>> {
    let arch = cfg.build_architecture(tasks)?;
    tasks
        .iter()
        .map(|spec| {
            let t = spec.task_id;
            let mut net = Network::new(arch.clone(), cfg.seed)?;
            net.begin_task(t);
            let last = *net.widths().last().expect("architecture has layers");
            net.add_head(t, last, spec.n_classes)?;
            let train_loss = train(&mut net, &spec.train, t, &cfg.train, cfg.seed, 0)
                .map_err(|source| HarnessError::Task { task: t, source })?;
            Ok(StlResult { task: t, test_accuracy: full_width_accuracy(&net, t, &spec.test)?, train_loss })
        })
        .collect()
}

/// Learns `spec` as the first task of a fresh network once per threshold
/// candidate.
pub fn probe_thresholds(cfg: &ExperimentConfig, spec: &TaskSpec, candidates: &[Vec<f64>]) -> Result<Vec<ThresholdProbe>> {
    let arch = cfg.build_architecture(std::slice::from_ref(spec))?;
    candidates
        .iter()
        .map(|x| {
            let mut learn = cfg.learn_config();
            learn.thresholds = x.clone();
            let mut net = Network::new(arch.clone(), cfg.seed)?;
            let mut ledger = CoreLedger::new(net.widths());
            let rep = learn_task(&mut net, &mut ledger, spec, &learn)
                .map_err(|source| HarnessError::Task { task: spec.task_id, source })?;
            Ok(ThresholdProbe {
                thresholds: x.clone(),
                test_accuracy: rep.test_accuracy,
                network_size_fraction: rep.network_size_fraction,
                core_counts: ledger.core_counts(spec.task_id),
            })
        })
        .collect()
}

fn full_width_accuracy(net: &Network, task: u32, data: &Dataset) -> Result<f64> {
    let mask = net.full_mask();
    let logits = net.forward(&data.x, task, &mask, Mode::Eval)?.logits;
    let correct = (0..logits.rows())
        .filter(|&r| {
            let row = logits.row(r);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            best == data.labels[r]
        })
        .count();
    Ok(100.0 * correct as f64 / data.len() as f64)
}
