use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use space_core::nn::Checkpoint;
use space_harness::experiment::FIXTURES_FILE;
use space_harness::{ablate_compare, report, run_experiment, verify_checkpoint, ExperimentConfig, FixtureSet, ReportFormat};

#[derive(Parser)]
#[command(name = "space", about = "Continual learning with core/residual filter partitioning", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn every task of a config and write reports, snapshots and fixtures.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config and SPACE_OUTPUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit per-task records or the filter table of a checkpoint.
    Report {
        checkpoint: PathBuf,
        #[arg(long, default_value = "records")]
        format: String,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a config with and without projection-subtraction and compare.
    Ablate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a checkpoint's invariants and replay stored logits.
    Verify {
        checkpoint: PathBuf,
        /// Fixture file; defaults to fixtures.bin next to the checkpoint.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> space_harness::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> space_harness::Result<bool> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            let outcome = run_experiment(&cfg, &dir)?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            println!("outputs written to {}", dir.display());
        }
        Command::Report { checkpoint, format, out } => {
            let format: ReportFormat = format.parse()?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            match out {
                Some(path) => report(&ckpt, format, fs::File::create(path)?)?,
                None => report(&ckpt, format, io::stdout().lock())?,
            }
        }
        Command::Ablate { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            let cmp = ablate_compare(&cfg, &dir)?;
            println!("{}", serde_json::to_string_pretty(&cmp)?);
        }
        Command::Verify { checkpoint, fixtures } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let fx_path = fixtures.or_else(|| checkpoint.parent().map(|d| d.join(FIXTURES_FILE)));
            let fx = match fx_path {
                Some(p) if p.exists() => Some(FixtureSet::load(p)?),
                _ => None,
            };
            let rep = verify_checkpoint(&ckpt, fx.as_ref());
            for r in &rep.replay {
                println!("task {}: max logit drift {:e}", r.task, r.max_abs_diff);
            }
            for v in &rep.violations {
                println!("VIOLATION: {v}");
            }
            println!("{} checks, {} violations", rep.checks, rep.violations.len());
            return Ok(rep.ok());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
