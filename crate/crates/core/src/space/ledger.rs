use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative per-layer core-filter counts after every learned task.
///
/// `totals[t - 1][l]` is the number of filters of layer `l` frozen once task
/// `t` has been learned. Task ids start at 1; task 0 means "nothing learned".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreLedger {
    widths: Vec<usize>,
    totals: Vec<Vec<usize>>,
}

impl CoreLedger {
    pub fn new(widths: Vec<usize>) -> Self {
        Self { widths, totals: Vec::new() }
    }

    pub(crate) fn from_parts(widths: Vec<usize>, totals: Vec<Vec<usize>>) -> Result<Self> {
        let mut ledger = Self::new(widths);
        for row in totals {
            ledger.push(row)?;
        }
        Ok(ledger)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len()
    }

    /// Number of tasks recorded so far.
    pub fn n_tasks(&self) -> usize {
        self.totals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.totals.is_empty()
    }

    /// Appends the totals of the next task, enforcing monotonicity and
    /// `F ≤ width`.
    pub fn push(&mut self, counts: Vec<usize>) -> Result<u32> {
        if counts.len() != self.widths.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} counts for {} layers",
                counts.len(),
                self.widths.len()
            )));
        }
        let prev = self.core_counts(self.n_tasks() as u32);
        for (l, (&c, &p)) in counts.iter().zip(&prev).enumerate() {
            if c < p {
                return Err(Error::BelowCore { layer: l, requested: c, core: p });
            }
            if c > self.widths[l] {
                return Err(Error::InvalidArgument(format!(
                    "layer {l}: {c} core filters exceed width {}",
                    self.widths[l]
                )));
            }
        }
        self.totals.push(counts);
        Ok(self.totals.len() as u32)
    }

    /// `F_l[task]`; all zeros for task 0. Panics past the last task.
    pub fn core_counts(&self, task: u32) -> Vec<usize> {
        if task == 0 {
            return vec![0; self.widths.len()];
        }
        self.totals[task as usize - 1].clone()
    }

    pub fn get(&self, task: u32) -> Option<&[usize]> {
        if task == 0 {
            return None;
        }
        self.totals.get(task as usize - 1).map(Vec::as_slice)
    }

    /// Filters added by `task`: `F_l[task] - F_l[task - 1]`.
    pub fn added(&self, task: u32) -> Vec<usize> {
        let now = self.core_counts(task);
        let before = self.core_counts(task - 1);
        now.iter().zip(&before).map(|(a, b)| a - b).collect()
    }

    /// Residual (trainable) filters available when `task` starts.
    pub fn residual_before(&self, task: u32) -> Vec<usize> {
        let before = self.core_counts(task - 1);
        self.widths.iter().zip(&before).map(|(w, b)| w - b).collect()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.totals
    }
}
