use std::path::Path;
use std::process::Command;

use rcgrf::data::save_csv;
use rcgrf::model_io::{save_model, SavedModel};
use rcgrf::{CellKind, CellParams, Dataset, ModelKind, SequenceSample, Vector};
use rcgrf_cli::{cmd_drift, cmd_eval, cmd_sweep, cmd_synth, cmd_train, RunConfig};

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::parse_str("hidden_dim = 4\nmax_epochs = 3\nwindow_length = 16\n").unwrap();
    cfg.lambda_grid = vec![0.0, 0.1];
    cfg
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rcgrf"))
}

#[test]
fn synth_default_has_200_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let a = cmd_synth(&cfg, &dir.path().join("a")).unwrap();
    let b = cmd_synth(&cfg, &dir.path().join("b")).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert_eq!(text, std::fs::read_to_string(b).unwrap());
}

#[test]
fn train_rerun_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    cmd_train(&cfg, None, &dir.path().join("a")).unwrap();
    cmd_train(&cfg, None, &dir.path().join("b")).unwrap();
    for f in ["metrics.txt", "train_log.csv", "train_summary.txt", "model.bin", "config.txt"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let metrics = std::fs::read_to_string(dir.path().join("a/metrics.txt")).unwrap();
    let keys: Vec<&str> = metrics.lines().map(|l| l.split(" = ").next().unwrap()).collect();
    assert_eq!(keys, ["accuracy", "precision_macro", "recall_macro", "f1_macro"]);
}

#[test]
fn eval_reproduces_train_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let trained = cmd_train(&cfg, None, &dir.path().join("t")).unwrap();
    let m = cmd_eval(&cfg, &dir.path().join("t/model.bin"), None, &dir.path().join("e")).unwrap();
    assert_eq!(m, trained.metrics);
}

#[test]
fn sweep_selects_from_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_sweep(&tiny(), None, dir.path()).unwrap();
    assert_eq!(out.sweep.runs.len(), 2);
    let summary = std::fs::read_to_string(dir.path().join("sweep_summary.txt")).unwrap();
    assert!(summary.starts_with(&format!("selected_lambda = {}\n", out.sweep.best().lambda)));
    let mut base = tiny();
    base.model = ModelKind::Gru;
    assert_eq!(cmd_sweep(&base, None, dir.path()).unwrap_err().code(), "usage");
}

/// GRU with all weights zero except the candidate bias: from h_0 = 0 the
/// state follows h_t = tanh(b)(1 − 2^−t), so drift halves each step.
fn write_contraction_case(dir: &Path) {
    let mut params = CellParams::zeros(CellKind::Gru, 1, 2, 2);
    params.weights.gates[2].bias = Vector::new(vec![1.0, -0.5]).unwrap();
    save_model(&SavedModel { params, normalization: None }, dir.join("model.bin")).unwrap();
    let samples = (0..2)
        .map(|i| {
            let inputs = vec![Vector::new(vec![0.3]).unwrap(); 12];
            SequenceSample::new(format!("p{i}"), format!("r{i}"), i, inputs, None).unwrap()
        })
        .collect();
    save_csv(&Dataset::new(samples, 2).unwrap(), dir.join("const.csv")).unwrap();
}

#[test]
fn drift_of_zero_weight_model_decays_geometrically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_contraction_case(d);
    let mut cfg = RunConfig::default();
    cfg.train.lambda = 0.01;
    let small = cmd_drift(&cfg, &d.join("model.bin"), Some(&d.join("const.csv")), &d.join("a")).unwrap();
    for r in &small.reports {
        for w in r.per_step_drift.windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 1e-9, "{} / {}", w[1], w[0]);
        }
        assert_eq!(r.drift_ratios[0], r.per_step_drift[0] / cfg.drift.epsilon);
    }
    let s = &small.summary;
    assert!((0.0..=1.0).contains(&s.lambda_bound_hold_rate));

    cfg.train.lambda = 5.0;
    let big = cmd_drift(&cfg, &d.join("model.bin"), Some(&d.join("const.csv")), &d.join("b")).unwrap();
    for (a, b) in small.reports.iter().zip(&big.reports) {
        assert_eq!(a.per_step_drift, b.per_step_drift);
        assert_eq!(a.l_rc, b.l_rc);
        assert_ne!(a.lambda_bound_rhs, b.lambda_bound_rhs);
    }
    for f in ["sequences/seq_0000.csv", "sequences/seq_0001.csv", "drift.svg"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap());
    }
    let table = std::fs::read_to_string(d.join("a/drift_summary.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn binary_reports_single_line_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.cfg");
    std::fs::write(&cfg_path, "hidden_dim = 4\nlearning_rat = 0.1\n").unwrap();
    let out = bin().args(["synth", "--config"]).arg(&cfg_path).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error[unknown_key]: "));
    assert!(err.contains("learning_rat"));

    let out = bin()
        .args(["train", "--data", "/definitely/not/here.csv", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[io]: "));

    let out = bin().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[usage]: "));
}

#[test]
fn binary_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, "seed = 1\nn_patients = 5\nsequences_per_patient = 2\n").unwrap();
    let out = bin()
        .args(["synth", "--seed", "9", "--set", "n_patients=4", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    let effective = RunConfig::parse_str(&written).unwrap();
    assert_eq!(effective.seed, 9);
    assert_eq!(effective.synth.n_patients, 4);
    let rows = std::fs::read_to_string(dir.path().join("data.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 4 * 2);
}
