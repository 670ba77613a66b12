use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use space_core::nn::{Checkpoint, Network};
use space_core::space::{accuracy, learn_task, CoreLedger, TaskReport};
use space_core::tasks::TaskSpec;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::fixtures::{FixtureSet, LogitFixture};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const FILTERS_FILE: &str = "filters.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const FIXTURES_FILE: &str = "fixtures.bin";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const SNAPSHOT_DIR: &str = "snapshots";

pub fn snapshot_path(dir: &Path, task: u32) -> PathBuf {
    dir.join(SNAPSHOT_DIR).join(format!("task_{task:03}.ckpt"))
}

/// Per-layer line of a task record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: usize,
    pub width: usize,
    pub f: usize,
    pub l: usize,
    pub r: usize,
    pub core_total: usize,
    pub v_t: Option<f64>,
    pub v_r: Option<f64>,
    pub v_r_proj: Option<f64>,
    /// `v_r_proj / v_r`, the accumulator start.
    pub explained_by_core: Option<f64>,
    pub accumulated: Option<usize>,
    pub capped: bool,
    pub exhausted: bool,
}

/// Deterministic record of one task (no wall-clock data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: u32,
    /// Test accuracy (%) of tasks `1..=task`, each with its own mask and head.
    pub accuracies: Vec<f64>,
    pub average_accuracy: f64,
    pub validation_accuracy: f64,
    pub train_loss: f64,
    pub retrain_loss: f64,
    pub network_size_fraction: f64,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_tasks: usize,
    pub final_accuracies: Vec<f64>,
    pub average_accuracy: f64,
    pub network_size_fraction: f64,
    pub core_counts: Vec<Vec<usize>>,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    task: u32,
    learn_seconds: f64,
    evaluate_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub records: Vec<TaskRecord>,
    pub summary: RunSummary,
    pub checkpoint: Checkpoint,
    pub fixtures: FixtureSet,
}

/// Builds the tasks described by `cfg` and runs them into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let tasks = cfg.build_tasks()?;
    run_tasks(cfg, &tasks, out_dir)
}

/// Learns `tasks` in order. After each task a snapshot checkpoint is saved
/// and every task so far is evaluated; at the end the records, the filter
/// table, the summary, the logit fixtures and the final checkpoint are
/// written to `out_dir`.
pub fn run_tasks(cfg: &ExperimentConfig, tasks: &[TaskSpec], out_dir: &Path) -> Result<RunOutcome> {
    let arch = cfg.build_architecture(tasks)?;
    let mut net = Network::new(arch, cfg.seed)?;
    let mut ledger = CoreLedger::new(net.widths());
    let learn = cfg.learn_config();
    fs::create_dir_all(out_dir.join(SNAPSHOT_DIR))?;

    let mut records = Vec::with_capacity(tasks.len());
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(tasks.len());
    let mut fixtures = FixtureSet::default();
    let mut timings = Vec::new();
    for spec in tasks {
        let t = spec.task_id;
        let started = Instant::now();
        let report = learn_task(&mut net, &mut ledger, spec, &learn).map_err(|source| HarnessError::Task { task: t, source })?;
        let learned = Instant::now();

        let accuracies =
            tasks[..t as usize].iter().map(|s| accuracy(&net, s.task_id, &s.test)).collect::<space_core::Result<Vec<_>>>()?;
        let n_fix = cfg.fixture_size.min(spec.test.len());
        let rows: Vec<usize> = (0..n_fix).collect();
        let inputs = spec.test.x.select_rows(&rows);
        let logits = net.predict(&inputs, t)?;
        fixtures.fixtures.push(LogitFixture { task: t, inputs, logits });

        history.push(accuracies.clone());
        Checkpoint { network: net.clone(), ledger: ledger.clone(), accuracy_history: history.clone() }
            .save(snapshot_path(out_dir, t))?;
        let record = task_record(&report, &ledger, accuracies);
        info!("task {t}: accuracies {:?}, size fraction {:.4}", record.accuracies, record.network_size_fraction);
        records.push(record);
        timings.push(Timing {
            task: t,
            learn_seconds: (learned - started).as_secs_f64(),
            evaluate_seconds: learned.elapsed().as_secs_f64(),
        });
    }

    let checkpoint = Checkpoint { network: net, ledger, accuracy_history: history };
    let summary = summarize(&records, &checkpoint.ledger);
    checkpoint.save(out_dir.join(FINAL_CHECKPOINT))?;
    fixtures.save(out_dir.join(FIXTURES_FILE))?;
    write_records(&records, &mut fs::File::create(out_dir.join(RECORDS_FILE))?)?;
    write_filter_table(&records, fs::File::create(out_dir.join(FILTERS_FILE))?)?;
    fs::write(out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    let mut tf = fs::File::create(out_dir.join(TIMINGS_FILE))?;
    for t in &timings {
        writeln!(tf, "{}", serde_json::to_string(t)?)?;
    }
    Ok(RunOutcome { dir: out_dir.to_path_buf(), records, summary, checkpoint, fixtures })
}

fn task_record(report: &TaskReport, ledger: &CoreLedger, accuracies: Vec<f64>) -> TaskRecord {
    let totals = ledger.core_counts(report.task);
    let layers = report
        .counts
        .iter()
        .enumerate()
        .map(|(l, c)| {
            let p = report.projections[l].as_ref();
            LayerRecord {
                layer: l,
                width: ledger.widths()[l],
                f: c.f,
                l: c.l,
                r: c.r,
                core_total: totals[l],
                v_t: p.map(|p| p.v_t),
                v_r: p.map(|p| p.v_r),
                v_r_proj: p.map(|p| p.v_r_proj),
                explained_by_core: p.map(|p| if p.v_r > 0.0 { p.v_r_proj / p.v_r } else { 0.0 }),
                accumulated: p.map(|p| p.accumulated),
                capped: p.is_some_and(|p| p.capped),
                exhausted: report.exhausted_layers.contains(&l),
            }
        })
        .collect();
    TaskRecord {
        task: report.task,
        average_accuracy: mean(&accuracies),
        accuracies,
        validation_accuracy: report.validation_accuracy,
        train_loss: report.train_loss,
        retrain_loss: report.retrain_loss,
        network_size_fraction: report.network_size_fraction,
        layers,
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn summarize(records: &[TaskRecord], ledger: &CoreLedger) -> RunSummary {
    let last = records.last();
    RunSummary {
        n_tasks: records.len(),
        final_accuracies: last.map(|r| r.accuracies.clone()).unwrap_or_default(),
        average_accuracy: last.map_or(0.0, |r| r.average_accuracy),
        network_size_fraction: last.map_or(0.0, |r| r.network_size_fraction),
        core_counts: ledger.rows().to_vec(),
        widths: ledger.widths().to_vec(),
    }
}

pub fn write_records<W: Write>(records: &[TaskRecord], w: &mut W) -> Result<()> {
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

/// One row per task and layer: the filter statistics of the whole run.
pub fn write_filter_table<W: Write>(records: &[TaskRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "task", "layer", "width", "f", "l", "r", "core_total", "explained_by_core", "accumulated", "capped", "exhausted",
    ])?;
    for rec in records {
        for l in &rec.layers {
            out.write_record([
                rec.task.to_string(),
                l.layer.to_string(),
                l.width.to_string(),
                l.f.to_string(),
                l.l.to_string(),
                l.r.to_string(),
                l.core_total.to_string(),
                l.explained_by_core.map_or(String::new(), |v| v.to_string()),
                l.accumulated.map_or(String::new(), |v| v.to_string()),
                l.capped.to_string(),
                l.exhausted.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a records file back.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TaskRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(HarnessError::from))
        .collect()
}
