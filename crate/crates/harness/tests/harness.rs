use std::fs;
use std::path::Path;
use std::process::Command;

use space_core::nn::{Architecture, Checkpoint, InputShape, LayerSpec, Network, Ownership};
use space_core::space::{network_size_fraction, CoreLedger};
use space_harness::experiment::{snapshot_path, FILTERS_FILE, FINAL_CHECKPOINT, FIXTURES_FILE, RECORDS_FILE, SUMMARY_FILE};
use space_harness::report::CSV_HEADER;
use space_harness::{
    ablate_compare, report, run_experiment, verify_checkpoint, ExperimentConfig, FixtureSet, HarnessError, ReportFormat,
    OUTPUT_DIR_ENV,
};

const SMALL: &str = r#"
seed = 4
thresholds = [99.0, 99.0]
activation_samples = 300
fixture_size = 32

[architecture]
layers = [{ kind = "dense", width = 16 }, { kind = "dense", width = 16 }]

[tasks]
kind = "synthetic"
dim = 16
n_tasks = 3
overlap = 0.5
train_per_class = 60
test_per_class = 20
within_class_std = 0.5

[train]
epochs = 8
lr = 0.05
decay_epochs = [6]
batch_size = 32

[retrain]
epochs = 6
lr = 0.05
decay_epochs = [5]
batch_size = 32
"#;

fn small(n_tasks: usize) -> ExperimentConfig {
    let text = SMALL.replace("n_tasks = 3", &format!("n_tasks = {n_tasks}"));
    let cfg = ExperimentConfig::from_toml(&text, Path::new("small.toml")).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p
}

fn space() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_space"));
    c.env_remove(OUTPUT_DIR_ENV).env("RUST_LOG", "warn");
    c
}

#[test]
fn unknown_config_key_is_rejected() {
    let text = SMALL.replace("seed = 4", "seed = 4\nlearning_rate = 0.1");
    assert!(matches!(ExperimentConfig::from_toml(&text, Path::new("x.toml")), Err(HarnessError::Config { .. })));
    let nested = SMALL.replace("batch_size = 32\n\n[retrain]", "batch_size = 32\nnesterov = true\n\n[retrain]");
    assert!(matches!(ExperimentConfig::from_toml(&nested, Path::new("x.toml")), Err(HarnessError::Config { .. })));
}

#[test]
fn invalid_config_values_are_rejected() {
    let bad = [
        SMALL.replace("thresholds = [99.0, 99.0]", "thresholds = [97.0]"),
        SMALL.replace("thresholds = [99.0, 99.0]", "thresholds = [97.0, 120.0]"),
        SMALL.replace("overlap = 0.5", "overlap = 1.5"),
        SMALL.replace("n_tasks = 3", "n_tasks = 0"),
        SMALL.replace("epochs = 8", "epochs = 0"),
    ];
    for text in bad {
        let cfg = ExperimentConfig::from_toml(&text, Path::new("x.toml")).unwrap();
        assert!(matches!(cfg.validate(), Err(HarnessError::Invalid(_))), "accepted:\n{text}");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["pmnist_desk.toml", "synthetic_overlap.toml", "rank_bound.toml"] {
        ExperimentConfig::load(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn empty_ledger_reports_header_only() {
    let arch = Architecture::new(InputShape::flat(4), vec![LayerSpec::Dense { width: 3, dropout: 0.0 }]).unwrap();
    let net = Network::new(arch, 1).unwrap();
    let ckpt = Checkpoint { ledger: CoreLedger::new(net.widths()), network: net, accuracy_history: vec![] };
    let mut out = Vec::new();
    report(&ckpt, ReportFormat::Csv, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), CSV_HEADER.join(",") + "\n");
    let mut out = Vec::new();
    report(&ckpt, ReportFormat::Records, &mut out).unwrap();
    assert!(out.is_empty());
}

#[test]
fn three_task_run_reports_and_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&small(3), tmp.path()).unwrap();
    for f in [RECORDS_FILE, FILTERS_FILE, SUMMARY_FILE, FIXTURES_FILE, FINAL_CHECKPOINT] {
        assert!(tmp.path().join(f).exists(), "{f} missing");
    }
    for t in 1..=3 {
        assert!(snapshot_path(tmp.path(), t).exists());
    }
    assert_eq!(outcome.records.len(), 3);
    for (i, r) in outcome.records.iter().enumerate() {
        assert_eq!(r.accuracies.len(), i + 1);
    }

    let ckpt = Checkpoint::load(tmp.path().join(FINAL_CHECKPOINT)).unwrap();
    let mut csv = Vec::new();
    report(&ckpt, ReportFormat::Csv, &mut csv).unwrap();
    let mut rdr = csv::Reader::from_reader(csv.as_slice());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3 * 2);

    // the fraction column is recomputed from the core totals in the same
    // rows: filters added at task s own (inputs at task s + 1) parameters
    let core = |t: usize, l: usize| -> usize {
        if t == 0 {
            return 0;
        }
        let r = rows.iter().find(|r| r[0] == *t.to_string() && r[1] == *l.to_string()).unwrap();
        r[3].parse().unwrap()
    };
    let total = (16 * 16 + 16 + 16 * 16 + 16) as f64;
    let mut owned = 0usize;
    for t in 1..=3usize {
        owned += (core(t, 0) - core(t - 1, 0)) * (16 + 1);
        owned += (core(t, 1) - core(t - 1, 1)) * (core(t, 0) + 1);
        let expect = owned as f64 / total;
        for r in rows.iter().filter(|r| r[0] == *t.to_string()) {
            let got: f64 = r[6].parse().unwrap();
            assert!((got - expect).abs() <= 1e-12, "task {t}: {got} vs {expect}");
        }
        assert!((outcome.records[t - 1].network_size_fraction - expect).abs() <= 1e-12);
    }

    let fx = FixtureSet::load(tmp.path().join(FIXTURES_FILE)).unwrap();
    let rep = verify_checkpoint(&ckpt, Some(&fx));
    assert!(rep.ok(), "{:?}", rep.violations);
    assert_eq!(rep.replay.len(), 3);
    assert!(rep.replay.iter().all(|r| r.max_abs_diff == 0.0));

    // every snapshot replays its own fixtures and passes the structure checks
    for t in 1..=3u32 {
        let snap = Checkpoint::load(snapshot_path(tmp.path(), t)).unwrap();
        let rep = verify_checkpoint(&snap, Some(&fx));
        assert!(rep.ok(), "snapshot {t}: {:?}", rep.violations);
        assert_eq!(rep.replay.len(), t as usize);
    }
}

#[test]
fn single_task_run() {
    let tmp = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&small(1), tmp.path()).unwrap();
    assert_eq!(outcome.summary.n_tasks, 1);
    assert_eq!(outcome.checkpoint.network.heads.len(), 1);
    let f = network_size_fraction(outcome.checkpoint.network.architecture(), &outcome.checkpoint.ledger, 1).unwrap();
    assert!(f > 0.0 && f < 1.0);
    assert!(verify_checkpoint(&outcome.checkpoint, Some(&outcome.fixtures)).ok());
}

#[test]
fn verify_detects_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&small(2), tmp.path()).unwrap();

    let mut freed = outcome.checkpoint.clone();
    let layer = &mut freed.network.layers[0];
    let j = layer.ownership.iter().position(|o| *o == Ownership::Free).expect("a free filter");
    layer.bias[j] = 0.5;
    assert!(!verify_checkpoint(&freed, None).ok());

    let mut drifted = outcome.checkpoint.clone();
    drifted.network.layers[0].bias[0] += 1e-6;
    let rep = verify_checkpoint(&drifted, Some(&outcome.fixtures));
    assert!(!rep.ok());
    assert!(rep.violations.iter().any(|v| v.contains("drifted")));

    // the CLI exits with status 2 on violations and 0 on a clean checkpoint
    let clean = space().arg("verify").arg(tmp.path().join(FINAL_CHECKPOINT)).output().unwrap();
    assert_eq!(clean.status.code(), Some(0), "{}", String::from_utf8_lossy(&clean.stdout));
    let bad = tmp.path().join("bad.ckpt");
    drifted.save(&bad).unwrap();
    let out = space().arg("verify").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("VIOLATION"));
}

#[test]
fn cli_run_report_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("n_tasks = 3", "n_tasks = 2"));
    let out_dir = tmp.path().join("out");
    let st = space().arg("run").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap().status;
    assert!(st.success());

    let ckpt = out_dir.join(FINAL_CHECKPOINT);
    let recs = space().args(["report", "--format", "records"]).arg(&ckpt).output().unwrap();
    assert!(recs.status.success());
    assert_eq!(String::from_utf8(recs.stdout).unwrap().lines().count(), 2);
    let table = tmp.path().join("filters.csv");
    let st = space().args(["report", "--format", "csv", "--out"]).arg(&table).arg(&ckpt).output().unwrap().status;
    assert!(st.success());
    assert_eq!(fs::read_to_string(&table).unwrap().lines().count(), 1 + 2 * 2);

    let bad_format = space().args(["report", "--format", "xml"]).arg(&ckpt).output().unwrap();
    assert_eq!(bad_format.status.code(), Some(1));
    let bad_cfg = write_config(tmp.path(), &SMALL.replace("seed = 4", "seed = 4\nbogus = 1"));
    let out = space().arg("run").arg(&bad_cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("n_tasks = 3", "n_tasks = 1"));
    let run = |seed: &str, dir: &str| {
        let d = tmp.path().join(dir);
        assert!(space().arg("run").arg(&cfg).args(["--seed", seed, "--out"]).arg(&d).output().unwrap().status.success());
        fs::read(d.join(FINAL_CHECKPOINT)).unwrap()
    };
    let a = run("4", "a");
    let b = run("5", "b");
    let c = ExperimentConfig::load(&cfg).unwrap();
    let direct = run_experiment(&c, &tmp.path().join("direct")).unwrap();
    assert_eq!(a, direct.checkpoint.to_bytes());
    assert_ne!(a, b);
}

#[test]
fn output_dir_env_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &SMALL.replace("n_tasks = 3", "n_tasks = 1").replace("seed = 4", "seed = 4\noutput_dir = \"from_config\""),
    );
    let env_dir = tmp.path().join("from_env");
    let st = space().arg("run").arg(&cfg).env(OUTPUT_DIR_ENV, &env_dir).output().unwrap().status;
    assert!(st.success());
    assert!(env_dir.join(RECORDS_FILE).exists());
    assert!(!tmp.path().join("from_config").exists());

    let st = space().arg("run").arg(&cfg).output().unwrap().status;
    assert!(st.success());
    assert!(tmp.path().join("from_config").join(RECORDS_FILE).exists());
}

#[test]
fn ablation_pairs_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(2);
    let cmp = ablate_compare(&cfg, tmp.path()).unwrap();
    assert!(tmp.path().join("with_ps").join(RECORDS_FILE).exists());
    assert!(tmp.path().join("without_ps").join(RECORDS_FILE).exists());
    // task 1 is identical in both arms; they only diverge from task 2 on
    assert_eq!(cmp.added_with_ps[0], cmp.added_without_ps[0]);
    for (d, (w, wo)) in cmp.added_delta.iter().zip(cmp.added_with_ps.iter().zip(&cmp.added_without_ps)) {
        for l in 0..d.len() {
            assert_eq!(d[l], wo[l] as i64 - w[l] as i64);
        }
    }

    let mut already = cfg.clone();
    already.disable_projection_subtraction = true;
    assert!(ablate_compare(&already, &tmp.path().join("again")).is_err());
}
