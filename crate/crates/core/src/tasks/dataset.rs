use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nn::{derive_rng, InputShape};

/// Fraction of each task's training data held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

const SPLIT_SLOT: u64 = 0x5E1;

/// Labeled examples, one row per example in `HWC` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub labels: Vec<usize>,
    pub shape: InputShape,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(x: DenseMatrix, labels: Vec<usize>, shape: InputShape, n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if x.rows() != labels.len() {
            return Err(Error::CountMismatch { images: x.rows(), labels: labels.len() });
        }
        if x.cols() != shape.len() {
            return Err(Error::DimensionMismatch(format!("{} features for input shape of {}", x.cols(), shape.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {n_classes} classes")));
        }
        Ok(Self { x, labels, shape, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            x: self.x.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            shape: self.shape,
            n_classes: self.n_classes,
        })
    }

    /// Seeded shuffle, then the first `fraction` of examples go to the
    /// second part (at least one, and at least one stays in the first).
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) || self.len() < 2 {
            return Err(Error::InvalidArgument(format!("cannot split {} examples at fraction {fraction}", self.len())));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut derive_rng(seed, 0, SPLIT_SLOT));
        let held = ((self.len() as f64 * fraction).round() as usize).clamp(1, self.len() - 1);
        let (held_idx, kept_idx) = idx.split_at(held);
        let mut kept_idx = kept_idx.to_vec();
        let mut held_idx = held_idx.to_vec();
        kept_idx.sort_unstable();
        held_idx.sort_unstable();
        Ok((self.subset(&kept_idx)?, self.subset(&held_idx)?))
    }

    /// Per-class example counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    fn map_features(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.x.as_mut_slice().iter_mut().for_each(|v| *v = f(*v));
        out
    }
}

/// A training and a test pool from which task sequences are derived.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseDataset {
    pub train: Dataset,
    pub test: Dataset,
}

impl BaseDataset {
    /// Splits one pool into train and test parts by seeded shuffle.
    pub fn from_pool(pool: &Dataset, test_fraction: f64, seed: u64) -> Result<Self> {
        let (train, test) = pool.split(test_fraction, seed ^ 0x7E57)?;
        Ok(Self { train, test })
    }

    pub fn shape(&self) -> InputShape {
        self.train.shape
    }

    pub fn n_classes(&self) -> usize {
        self.train.n_classes
    }
}

/// How a task was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Generator {
    Permuted { seed: u64, index: u32 },
    Split { classes: Vec<usize> },
    Synthetic { seed: u64, dim: usize, overlap: f64, directions: Vec<usize> },
}

/// Scalar standardization statistics of one training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub fn fit(data: &Dataset) -> Self {
        let v = data.x.as_slice();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let (mean, std) = (self.mean, self.std);
        data.map_features(|v| (v - mean) / std)
    }
}

/// One task of a sequence: standardized train / validation / test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: u32,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub n_classes: usize,
    pub generator: Generator,
    pub standardization: Standardization,
}

impl TaskSpec {
    /// Holds out the validation split, then standardizes all three sets
    /// with the statistics of the remaining training data.
    pub fn new(task_id: u32, train: &Dataset, test: &Dataset, generator: Generator, seed: u64) -> Result<Self> {
        if task_id == 0 {
            return Err(Error::InvalidArgument("task ids start at 1".into()));
        }
        if train.shape != test.shape || train.n_classes != test.n_classes {
            return Err(Error::DimensionMismatch("train and test sets disagree on shape or classes".into()));
        }
        let (fit, validation) = train.split(VALIDATION_FRACTION, seed ^ task_id as u64)?;
        let standardization = Standardization::fit(&fit);
        Ok(Self {
            task_id,
            train: standardization.apply(&fit),
            validation: standardization.apply(&validation),
            test: standardization.apply(test),
            n_classes: train.n_classes,
            generator,
            standardization,
        })
    }

    pub fn shape(&self) -> InputShape {
        self.train.shape
    }
}
