use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use space_core::nn::Checkpoint;
use space_core::space::network_size_fraction;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// One JSON object per task.
    Records,
    /// Filter utilization per task and layer.
    Csv,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "records" => Ok(Self::Records),
            "csv" => Ok(Self::Csv),
            other => Err(HarnessError::UnknownFormat(other.to_string())),
        }
    }
}

/// Checkpoint-derived view of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub task: u32,
    pub accuracies: Vec<f64>,
    pub average_accuracy: Option<f64>,
    pub core_counts: Vec<usize>,
    pub added: Vec<usize>,
    pub network_size_fraction: f64,
}

pub fn checkpoint_records(ckpt: &Checkpoint) -> Result<Vec<CheckpointRecord>> {
    let arch = ckpt.network.architecture();
    (1..=ckpt.ledger.n_tasks() as u32)
        .map(|t| {
            let accuracies = ckpt.accuracy_history.get(t as usize - 1).cloned().unwrap_or_default();
            Ok(CheckpointRecord {
                task: t,
                average_accuracy: (!accuracies.is_empty()).then(|| accuracies.iter().sum::<f64>() / accuracies.len() as f64),
                accuracies,
                core_counts: ckpt.ledger.core_counts(t),
                added: ckpt.ledger.added(t),
                network_size_fraction: network_size_fraction(arch, &ckpt.ledger, t)?,
            })
        })
        .collect()
}

pub const CSV_HEADER: [&str; 7] =
    ["task", "layer", "width", "core_total", "added", "residual_before", "network_size_fraction"];

/// Writes the checkpoint's report in `format`.
pub fn report<W: Write>(ckpt: &Checkpoint, format: ReportFormat, mut w: W) -> Result<()> {
    let records = checkpoint_records(ckpt)?;
    match format {
        ReportFormat::Records => {
            for r in &records {
                writeln!(w, "{}", serde_json::to_string(r)?)?;
            }
        }
        ReportFormat::Csv => {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(CSV_HEADER)?;
            for r in &records {
                let residual = ckpt.ledger.residual_before(r.task);
                for l in 0..ckpt.ledger.n_layers() {
                    out.write_record([
                        r.task.to_string(),
                        l.to_string(),
                        ckpt.ledger.widths()[l].to_string(),
                        r.core_counts[l].to_string(),
                        r.added[l].to_string(),
                        residual[l].to_string(),
                        r.network_size_fraction.to_string(),
                    ])?;
                }
            }
            out.flush()?;
        }
    }
    Ok(())
}
