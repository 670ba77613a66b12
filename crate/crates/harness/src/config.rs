//! Declarative experiment configuration (TOML). Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use space_core::nn::{Architecture, InputShape, LayerSpec};
use space_core::space::{LearnConfig, TrainSchedule, DEFAULT_ACTIVATION_SAMPLES};
use space_core::tasks::{
    ingest_idx, make_permuted_tasks, make_split_tasks, make_synthetic_tasks_with, BaseDataset, SyntheticParams, TaskSpec,
};

use crate::error::{HarnessError, Result};

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "SPACE_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Variance threshold (percent) per feature layer.
    pub thresholds: Vec<f64>,
    #[serde(default = "default_samples")]
    pub activation_samples: usize,
    #[serde(default)]
    pub disable_projection_subtraction: bool,
    /// Test examples per task whose logits are stored for replay checks.
    #[serde(default = "default_fixture")]
    pub fixture_size: usize,
    pub architecture: ArchitectureConfig,
    pub tasks: TaskSource,
    pub train: TrainSchedule,
    pub retrain: TrainSchedule,
}

fn default_samples() -> usize {
    DEFAULT_ACTIVATION_SAMPLES
}

fn default_fixture() -> usize {
    256
}

/// Feature layers; the input shape comes from the task data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskSource {
    Permuted {
        n_tasks: usize,
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "one")]
        downsample: usize,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Split {
        classes_per_task: usize,
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "one")]
        downsample: usize,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Synthetic {
        dim: usize,
        n_tasks: usize,
        overlap: f64,
        #[serde(default)]
        train_per_class: Option<usize>,
        #[serde(default)]
        test_per_class: Option<usize>,
        #[serde(default)]
        signal_dims: Option<usize>,
        #[serde(default)]
        separation: Option<f64>,
        #[serde(default)]
        decay: Option<f64>,
        #[serde(default)]
        within_class_std: Option<f64>,
        #[serde(default)]
        noise_std: Option<f64>,
        /// `[channels, height, width]`; must hold exactly `dim` values.
        #[serde(default)]
        image: Option<[usize; 3]>,
    },
}

fn one() -> usize {
    1
}

fn default_test_fraction() -> f64 {
    0.2
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| HarnessError::Config { path: origin.to_path_buf(), source })
    }

    /// Reads and validates a config file, resolving data paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        // relative data paths resolve against the config file's directory
        if let TaskSource::Permuted { images, labels, .. } | TaskSource::Split { images, labels, .. } = &mut self.tasks {
            fix(images);
            fix(labels);
        }
        if let Some(out) = &mut self.output_dir {
            fix(out);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.architecture.layers.len();
        if n == 0 {
            return Err(HarnessError::Invalid("architecture has no layers".into()));
        }
        if self.thresholds.len() != n {
            return Err(HarnessError::Invalid(format!("{} thresholds for {n} layers", self.thresholds.len())));
        }
        if let Some(x) = self.thresholds.iter().find(|&&x| !(x > 0.0 && x <= 100.0)) {
            return Err(HarnessError::Invalid(format!("threshold {x} outside (0, 100]")));
        }
        if self.activation_samples < 2 {
            return Err(HarnessError::Invalid("activation_samples must be at least 2".into()));
        }
        for (name, s) in [("train", &self.train), ("retrain", &self.retrain)] {
            s.validate().map_err(|e| HarnessError::Invalid(format!("{name}: {e}")))?;
        }
        match &self.tasks {
            TaskSource::Permuted { n_tasks: 0, .. } | TaskSource::Synthetic { n_tasks: 0, .. } => {
                Err(HarnessError::Invalid("n_tasks must be at least 1".into()))
            }
            TaskSource::Synthetic { overlap, .. } if !(0.0..=1.0).contains(overlap) => {
                Err(HarnessError::Invalid(format!("overlap {overlap} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Output directory: the environment override, else the config value,
    /// else `runs/default`.
    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs/default"))
    }

    pub fn learn_config(&self) -> LearnConfig {
        LearnConfig {
            thresholds: self.thresholds.clone(),
            activation_samples: self.activation_samples,
            disable_projection_subtraction: self.disable_projection_subtraction,
            seed: self.seed,
            train: self.train.clone(),
            retrain: self.retrain.clone(),
        }
    }

    pub fn build_tasks(&self) -> Result<Vec<TaskSpec>> {
        let load = |images: &Path, labels: &Path, downsample: usize, test_fraction: f64| -> Result<BaseDataset> {
            let pool = ingest_idx(images, labels, downsample)?;
            Ok(BaseDataset::from_pool(&pool, test_fraction, self.seed)?)
        };
        Ok(match &self.tasks {
            TaskSource::Permuted { n_tasks, images, labels, downsample, test_fraction } => {
                make_permuted_tasks(&load(images, labels, *downsample, *test_fraction)?, *n_tasks, self.seed)?
            }
            TaskSource::Split { classes_per_task, images, labels, downsample, test_fraction } => {
                make_split_tasks(&load(images, labels, *downsample, *test_fraction)?, *classes_per_task, self.seed)?
            }
            TaskSource::Synthetic {
                dim,
                n_tasks,
                overlap,
                train_per_class,
                test_per_class,
                signal_dims,
                separation,
                decay,
                within_class_std,
                noise_std,
                image,
            } => {
                let mut p = SyntheticParams::new(*dim, *n_tasks, *overlap, self.seed);
                p.train_per_class = train_per_class.unwrap_or(p.train_per_class);
                p.test_per_class = test_per_class.unwrap_or(p.test_per_class);
                p.signal_dims = signal_dims.unwrap_or(p.signal_dims);
                p.separation = separation.unwrap_or(p.separation);
                p.decay = decay.unwrap_or(p.decay);
                p.within_class_std = within_class_std.unwrap_or(p.within_class_std);
                p.noise_std = noise_std.unwrap_or(p.noise_std);
                p.image = image.map(|[c, h, w]| InputShape::image(c, h, w));
                make_synthetic_tasks_with(&p)?
            }
        })
    }

    pub fn build_architecture(&self, tasks: &[TaskSpec]) -> Result<Architecture> {
        let first = tasks.first().ok_or_else(|| HarnessError::Invalid("no tasks".into()))?;
        Ok(Architecture::new(first.shape(), self.architecture.layers.clone())?)
    }
}
