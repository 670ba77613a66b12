//! Threshold calibration against the single-task reference.
//!
//! `cargo run --release -p space-harness --example calibrate -- configs/pmnist_desk.toml`
//!
//! Trains an unpruned network on task 1, then learns task 1 with pruning at
//! a grid of per-layer thresholds and prints accuracy and network size for
//! each.

use std::env;

use space_harness::{probe_thresholds, stl_reference, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = env::args().nth(1).ok_or("usage: calibrate <config>")?;
    let cfg = ExperimentConfig::load(&path)?;
    let tasks = cfg.build_tasks()?;
    let stl = stl_reference(&cfg, &tasks[..1])?;
    println!("STL task 1: {:.2}% (train loss {:.4})", stl[0].test_accuracy, stl[0].train_loss);

    let grid = [90.0, 95.0, 97.0, 99.0, 99.5, 99.9];
    let n = cfg.thresholds.len();
    let candidates: Vec<Vec<f64>> = if n == 2 {
        grid.iter().flat_map(|&a| grid.iter().map(move |&b| vec![a, b])).collect()
    } else {
        grid.iter().map(|&x| vec![x; n]).collect()
    };
    println!("| thresholds | accuracy (%) | size fraction | core |");
    println!("|---|---|---|---|");
    for p in probe_thresholds(&cfg, &tasks[0], &candidates)? {
        println!(
            "| {:?} | {:.2} | {:.4} | {:?} |",
            p.thresholds, p.test_accuracy, p.network_size_fraction, p.core_counts
        );
    }
    Ok(())
}
