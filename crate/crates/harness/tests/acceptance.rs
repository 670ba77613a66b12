//! End-to-end acceptance criteria. Runs as a plain binary so that every
//! criterion prints its verdict even when all of them pass.

#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use space_core::linalg::{mean_normalize, project_onto_basis, reduced_svd_via_gram, DenseMatrix};
use space_core::nn::Checkpoint;
use space_core::space::{
    count_filters_first_task, projection_subtraction_pca, ActivationMatrix, NEGLIGIBLE_RATIO, SCAN_TOLERANCE,
};
use space_harness::experiment::{
    read_records, snapshot_path, FILTERS_FILE, FINAL_CHECKPOINT, FIXTURES_FILE, RECORDS_FILE, SUMMARY_FILE,
};
use space_harness::{
    ablate_compare, probe_thresholds, run_experiment, stl_reference, ExperimentConfig, FixtureSet, TaskSource,
    OUTPUT_DIR_ENV,
};

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(root().join("configs").join(name)).unwrap()
}

fn scratch() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn space_run(cfg: &Path, out: &Path) -> Duration {
    let started = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_space"))
        .arg("run")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env_remove(OUTPUT_DIR_ENV)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
        .status;
    assert!(status.success(), "space run {} failed", cfg.display());
    started.elapsed()
}

/// The permuted-digits run shared by the forgetting, learning and
/// determinism criteria.
fn pmnist_run() -> &'static (PathBuf, Duration) {
    static RUN: OnceLock<(PathBuf, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = scratch().join("pmnist_a");
        let took = space_run(&root().join("configs/pmnist_desk.toml"), &dir);
        (dir, took)
    })
}

// ---------------------------------------------------------------------------
// projection / conservation corpus

struct Pair {
    a_f: DenseMatrix,
    a_r: DenseMatrix,
}

fn corpus() -> &'static Vec<Pair> {
    static CORPUS: OnceLock<Vec<Pair>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        (0..200)
            .map(|_| {
                let n = rng.gen_range(64..=2000);
                let f = rng.gen_range(1..=32);
                let r = rng.gen_range(1..=32);
                let scales: Vec<f64> = (0..f + r).map(|_| 10f64.powf(rng.gen_range(-1.0..1.0))).collect();
                let mut raw = DenseMatrix::zeros(n, f + r);
                for i in 0..n {
                    for (j, s) in scales.iter().enumerate() {
                        raw.set(i, j, s * rng.gen_range(-1.0..1.0) + rng.gen_range(-0.5..0.5));
                    }
                }
                // part of the residual block is correlated with the core block
                let mix: Vec<f64> = (0..f * r).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for i in 0..n {
                    for k in 0..r {
                        let c: f64 = (0..f).map(|j| raw.get(i, j) * mix[j * r + k]).sum();
                        raw.set(i, f + k, raw.get(i, f + k) + 0.5 * c);
                    }
                }
                let (a, _) = mean_normalize(&raw).unwrap();
                Pair { a_f: a.columns(0..f).unwrap(), a_r: a.columns(f..f + r).unwrap() }
            })
            .collect()
    })
}

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Least squares through the normal equations: A_f (A_fᵀA_f)⁻¹ A_fᵀ A_r.
fn normal_equations_projection(a_f: &DenseMatrix, a_r: &DenseMatrix) -> DMatrix<f64> {
    let (f, r) = (to_na(a_f), to_na(a_r));
    let gram = f.transpose() * &f;
    let coeffs = gram.cholesky().expect("full-rank core block").solve(&(f.transpose() * &r));
    f * coeffs
}

fn criterion_1() -> Verdict {
    let mut worst: f64 = 0.0;
    for (i, p) in corpus().iter().enumerate() {
        let u = reduced_svd_via_gram(&p.a_f).unwrap().left_basis.ok_or(format!("pair {i}: empty basis"))?;
        let got = to_na(&project_onto_basis(&u, &p.a_r).unwrap());
        let want = normal_equations_projection(&p.a_f, &p.a_r);
        let rel = (&got - &want).norm() / want.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        ensure(rel <= 1e-6, || format!("pair {i}: relative error {rel:e}"))?;
    }
    Ok(format!("200 pairs, worst relative Frobenius error {worst:.2e}"))
}

fn criterion_2() -> Verdict {
    let (mut worst_total, mut worst_residual): (f64, f64) = (0.0, 0.0);
    for (i, p) in corpus().iter().enumerate() {
        let f = p.a_f.cols();
        let a = ActivationMatrix::from_raw(0, &p.a_f.hcat(&p.a_r).unwrap()).unwrap();
        let rep = projection_subtraction_pca(&a, f, 95.0).unwrap();
        let e1 = (rep.v_t - rep.v_f - rep.v_r).abs() / rep.v_t;
        let e2 = (rep.v_r - rep.v_r_proj - rep.v_r_new).abs() / rep.v_r;
        worst_total = worst_total.max(e1);
        worst_residual = worst_residual.max(e2);
        ensure(e1 <= 1e-8 && e2 <= 1e-8, || format!("pair {i}: relative errors {e1:e}, {e2:e}"))?;
    }
    Ok(format!("worst v_T split error {worst_total:.2e}, worst v_r split error {worst_residual:.2e}"))
}

/// Covariance eigendecomposition by nalgebra followed by a cumulative scan.
fn brute_force_count(raw: &DenseMatrix, x: f64) -> usize {
    let mut c = to_na(raw);
    for j in 0..c.ncols() {
        let mean = c.column(j).mean();
        c.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = c.transpose() * &c / (c.nrows() as f64 - 1.0);
    let mut ev: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let total: f64 = ev.iter().sum();
    let (mut acc, mut k) = (0.0, 0);
    while k < ev.len() && acc < x / 100.0 - SCAN_TOLERANCE && ev[k] / total > NEGLIGIBLE_RATIO {
        acc += ev[k] / total;
        k += 1;
    }
    k.max(1)
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut compared = 0;
    for i in 0..100 {
        let (n, m) = (rng.gen_range(40..400), rng.gen_range(2..=32));
        let decay: f64 = rng.gen_range(0.5..0.98);
        let mut raw = DenseMatrix::zeros(n, m);
        for r in 0..n {
            for j in 0..m {
                raw.set(r, j, decay.powi(j as i32) * rng.gen_range(-1.0..1.0));
            }
        }
        let a = ActivationMatrix::from_raw(0, &raw).unwrap();
        for x in [90.0, 95.0, 99.0, 99.9] {
            let got = count_filters_first_task(&a, x).unwrap();
            let want = brute_force_count(&raw, x);
            ensure(got == want, || format!("matrix {i} (n={n}, m={m}) x={x}: {got} vs oracle {want}"))?;
            compared += 1;
        }
    }
    let mut iso = DenseMatrix::zeros(40, 20);
    for j in 0..20 {
        iso.set(2 * j, j, 1.0);
        iso.set(2 * j + 1, j, -1.0);
    }
    let equal = count_filters_first_task(&ActivationMatrix::from_raw(0, &iso).unwrap(), 95.0).unwrap();
    ensure(equal == 19, || format!("20 equal components at 95%: {equal}, expected 19"))?;
    Ok(format!("{compared} counts agree with the eigen oracle; 20 equal components at 95% -> {equal}"))
}

fn criterion_4() -> Verdict {
    let (dir, took) = pmnist_run();
    let final_ckpt = Checkpoint::load(dir.join(FINAL_CHECKPOINT)).unwrap();
    let fixtures = FixtureSet::load(dir.join(FIXTURES_FILE)).unwrap();
    let n_tasks = final_ckpt.ledger.n_tasks() as u32;
    ensure(n_tasks == 5, || format!("{n_tasks} tasks learned"))?;
    let mut worst: f64 = 0.0;
    for t in 1..n_tasks {
        let snap = Checkpoint::load(snapshot_path(dir, t)).unwrap();
        let fx = fixtures.fixtures.iter().find(|f| f.task == t).ok_or(format!("no fixture for task {t}"))?;
        ensure(fx.inputs.rows() == 256, || format!("task {t}: fixture has {} examples", fx.inputs.rows()))?;
        let then = snap.network.predict(&fx.inputs, t).unwrap();
        let now = final_ckpt.network.predict(&fx.inputs, t).unwrap();
        let drift = now.sub(&then).unwrap().max_abs().max(now.sub(&fx.logits).unwrap().max_abs());
        worst = worst.max(drift);
        ensure(drift <= 1e-12, || format!("task {t}: logits drifted by {drift:e}"))?;
    }
    ensure(*took < Duration::from_secs(300), || format!("run took {took:?}"))?;
    Ok(format!("tasks 1-4 replay with max drift {worst:e}; run took {:.1} s", took.as_secs_f64()))
}

fn criterion_5() -> Verdict {
    let started = Instant::now();
    let base = config("synthetic_overlap.toml");
    let mut ratios: Vec<Vec<f64>> = Vec::new();
    let mut detail = Vec::new();
    let mut last = None;
    for overlap in [0.0, 0.5, 1.0] {
        let mut cfg = base.clone();
        match &mut cfg.tasks {
            TaskSource::Synthetic { overlap: o, .. } => *o = overlap,
            _ => return Err("overlap config is not synthetic".into()),
        }
        let dir = scratch().join(format!("overlap_{overlap}"));
        let cmp = ablate_compare(&cfg, &dir).unwrap();
        let recs = read_records(dir.join("with_ps").join(RECORDS_FILE)).unwrap();
        let r: Vec<f64> = recs[1].layers.iter().map(|l| l.explained_by_core.unwrap_or(0.0)).collect();
        let (fw, fwo) = (cmp.with_ps.network_size_fraction, cmp.without_ps.network_size_fraction);
        ensure(fw <= fwo, || format!("overlap {overlap}: with-PS fraction {fw} > without-PS {fwo}"))?;
        detail.push(format!("ov {overlap}: ratio {:?} fraction {fw:.3}/{fwo:.3}", r.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>()));
        ratios.push(r);
        last = Some(cmp);
    }
    for l in 0..ratios[0].len() {
        let col: Vec<f64> = ratios.iter().map(|r| r[l]).collect();
        ensure(col.windows(2).all(|w| w[0] <= w[1]), || format!("layer {l}: explained-by-core ratios {col:?} decrease"))?;
    }
    let cmp = last.unwrap();
    let (with, without) = (&cmp.added_with_ps[1], &cmp.added_without_ps[1]);
    let minimal = (0..with.len()).any(|l| without[l] > 0 && with[l] as f64 <= 0.1 * without[l] as f64);
    ensure(minimal, || format!("overlap 1: task 2 adds {with:?} with PS vs {without:?} without"))?;
    let took = started.elapsed();
    ensure(took < Duration::from_secs(120), || format!("sweep took {took:?}"))?;
    Ok(format!("{}; overlap 1 adds {with:?} vs {without:?}", detail.join("; ")))
}

fn criterion_6() -> Verdict {
    let base = config("rank_bound.toml");
    let mut max_selected = 0;
    let mut max_total = 0;
    for x in [90.0, 99.0, 99.9, 99.99, 100.0] {
        let mut cfg = base.clone();
        cfg.thresholds[0] = x;
        let out = run_experiment(&cfg, &scratch().join(format!("rank_{x}"))).unwrap();
        for rec in &out.records {
            let first = &rec.layers[0];
            ensure(first.width >= 28, || format!("first layer has only {} filters", first.width))?;
            ensure(first.l <= 27, || format!("x={x} task {}: {} filters selected", rec.task, first.l))?;
            ensure(first.core_total <= 27, || format!("x={x} task {}: core total {}", rec.task, first.core_total))?;
            max_selected = max_selected.max(first.l);
            max_total = max_total.max(first.core_total);
        }
    }
    Ok(format!("3-channel 3x3 conv, 32 filters, 3 tasks x 5 thresholds: max selected {max_selected}, max core {max_total}"))
}

fn criterion_7() -> Verdict {
    let res = gradcheck::check_random_instances(20, 2024);
    ensure(res.failures.is_empty(), || res.failures.join("; "))?;
    ensure(res.skipped * 50 < res.checked, || format!("{} of {} parameters straddle kinks", res.skipped, res.checked))?;
    Ok(format!(
        "20 instances, {} parameters within {:e} (worst {:.1e}), {} kink skips",
        res.checked,
        gradcheck::TOL,
        res.worst_relative,
        res.skipped
    ))
}

fn criterion_8() -> Verdict {
    let (dir, _) = pmnist_run();
    let recs = read_records(dir.join(RECORDS_FILE)).unwrap();
    let last = recs.last().ok_or("no records")?;
    ensure(recs.len() == 5, || format!("{} tasks", recs.len()))?;
    ensure(last.average_accuracy >= 90.0, || format!("average accuracy {:.2}%", last.average_accuracy))?;
    ensure(last.network_size_fraction < 1.0, || format!("size fraction {}", last.network_size_fraction))?;
    let n_layers = last.layers.len();
    let added: Vec<Vec<usize>> =
        (0..n_layers).map(|l| recs.iter().map(|r| r.layers[l].core_total - r.layers[l].f).collect()).collect();
    let trend = added.iter().any(|a| a[1..].windows(2).all(|w| w[0] > w[1]));
    ensure(trend, || format!("no layer with strictly decreasing additions from task 2 to 5: {added:?}"))?;

    let cfg = config("pmnist_desk.toml");
    let tasks = cfg.build_tasks().unwrap();
    let stl = stl_reference(&cfg, &tasks[..1]).unwrap();
    let probe = probe_thresholds(&cfg, &tasks[0], &[cfg.thresholds.clone()]).unwrap();
    ensure(root().join("docs/calibration.md").exists(), || "calibration record missing".into())?;
    Ok(format!(
        "average {:.2}%, size fraction {:.4}, additions per layer {added:?}; task 1 STL {:.2}% vs pruned {:.2}%",
        last.average_accuracy, last.network_size_fraction, stl[0].test_accuracy, probe[0].test_accuracy
    ))
}

fn criterion_9() -> Verdict {
    let (a, _) = pmnist_run();
    let b = scratch().join("pmnist_b");
    space_run(&root().join("configs/pmnist_desk.toml"), &b);
    let mut files: Vec<PathBuf> =
        [RECORDS_FILE, FILTERS_FILE, SUMMARY_FILE, FIXTURES_FILE, FINAL_CHECKPOINT].iter().map(PathBuf::from).collect();
    files.extend((1..=5).map(|t| snapshot_path(Path::new(""), t)));
    for f in &files {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        ensure(x == y, || format!("{} differs between runs", f.display()))?;
    }
    Ok(format!("{} output files byte-identical across two runs", files.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("projection oracle", criterion_1),
        ("variance conservation", criterion_2),
        ("PCA-count oracle", criterion_3),
        ("zero forgetting", criterion_4),
        ("resource minimality ablation", criterion_5),
        ("rank bound", criterion_6),
        ("gradient checks", criterion_7),
        ("desk-scale learning", criterion_8),
        ("determinism", criterion_9),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match verdict {
            Ok(msg) => println!("PASS criterion {}: {name} ({secs:.1} s) - {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({secs:.1} s) - {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
