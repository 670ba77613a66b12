use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::{run_tasks, RunSummary};

pub const COMPARISON_FILE: &str = "comparison.json";

/// Paired runs with and without projection-subtraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub with_ps: RunSummary,
    pub without_ps: RunSummary,
    /// Per-task, per-layer filters added with projection-subtraction.
    pub added_with_ps: Vec<Vec<usize>>,
    pub added_without_ps: Vec<Vec<usize>>,
    /// `added_without_ps - added_with_ps`.
    pub added_delta: Vec<Vec<i64>>,
}

/// Runs `cfg` twice on identical tasks and seeds, into `out_dir/with_ps` and
/// `out_dir/without_ps`, and writes the comparison.
pub fn ablate_compare(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Comparison> {
    if cfg.disable_projection_subtraction {
        return Err(HarnessError::Invalid("ablation expects projection-subtraction enabled in the config".into()));
    }
    cfg.validate()?;
    let tasks = cfg.build_tasks()?;
    let with = run_tasks(cfg, &tasks, &out_dir.join("with_ps"))?;
    let mut plain = cfg.clone();
    plain.disable_projection_subtraction = true;
    let without = run_tasks(&plain, &tasks, &out_dir.join("without_ps"))?;

    let added = |s: &RunSummary| -> Vec<Vec<usize>> {
        let mut prev = vec![0; s.widths.len()];
        s.core_counts
            .iter()
            .map(|row| {
                let d = row.iter().zip(&prev).map(|(a, b)| a - b).collect();
                prev = row.clone();
                d
            })
            .collect()
    };
    let (aw, ao) = (added(&with.summary), added(&without.summary));
    let added_delta =
        aw.iter().zip(&ao).map(|(w, o)| w.iter().zip(o).map(|(&a, &b)| b as i64 - a as i64).collect()).collect();
    let cmp = Comparison {
        with_ps: with.summary,
        without_ps: without.summary,
        added_with_ps: aw,
        added_without_ps: ao,
        added_delta,
    };
    fs::write(out_dir.join(COMPARISON_FILE), serde_json::to_string_pretty(&cmp)? + "\n")?;
    Ok(cmp)
}
