//! The six subcommands. Each one validates its config, runs, and writes its
//! artifacts into `out`; the structured results are also returned so tests
//! can inspect them without re-parsing files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rcgrf::cells::forward_from_zero;
use rcgrf::data::{corrupt, load_csv, patient_split, save_csv, synth_generate, zscore_fit_apply, NormStats};
use rcgrf::diagnostics::{trajectory_drift, DriftReport, DriftSummary};
use rcgrf::metrics::{evaluate, summarize, ConfusionMatrix, Metrics};
use rcgrf::model_io::{load_model, save_model, SavedModel};
use rcgrf::train::{lambda_sweep, train, SweepResult};
use rcgrf::{CellParams, Dataset, ModelKind, Rng, TrainLog};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::svg::{line_chart, Series};

/// Stream of the run seed that drives test-time corruption.
pub const CORRUPTION_STREAM: u64 = 21;

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(&path, contents).map_err(|e| rcgrf::Error::io(&path, e))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| rcgrf::Error::io(dir, e))?;
    Ok(())
}

fn start(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    ensure_dir(out)?;
    write(out.join("config.txt"), cfg.to_text())
}

/// Loads `data` if given, otherwise synthesizes a dataset from the seed.
pub fn source_data(cfg: &RunConfig, data: Option<&Path>, seed: u64) -> CliResult<Dataset> {
    Ok(match data {
        Some(path) => load_csv(path)?,
        None => synth_generate(&Rng::new(seed), &cfg.synth)?,
    })
}

fn corrupt_for_test(cfg: &RunConfig, data: &Dataset, seed: u64) -> CliResult<Dataset> {
    let rng = Rng::new(seed).split(CORRUPTION_STREAM);
    Ok(corrupt(data, &rng, cfg.test_noise_std, cfg.test_missing_frac)?)
}

fn is_corrupting(cfg: &RunConfig) -> bool {
    cfg.test_noise_std > 0.0 || cfg.test_missing_frac > 0.0
}

/// Normalized splits for one run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    /// `test` after the configured corruption (identical when none).
    pub test_corrupted: Dataset,
    pub stats: NormStats,
}

/// Splits by patient, corrupts the raw test split, then normalizes every
/// split with statistics fitted on train.
pub fn prepare(cfg: &RunConfig, data: &Dataset, seed: u64) -> CliResult<Prepared> {
    let (train, val, test) = patient_split(data, &cfg.split_spec(seed))?;
    let corrupted = corrupt_for_test(cfg, &test, seed)?;
    let (train, mut others, stats) = zscore_fit_apply(&train, &[&val, &test, &corrupted])?;
    let test_corrupted = others.pop().expect("three datasets in, three out");
    let test = others.pop().expect("three datasets in, three out");
    let val = others.pop().expect("three datasets in, three out");
    Ok(Prepared {
        train,
        val,
        test,
        test_corrupted,
        stats,
    })
}

fn score(params: &CellParams, data: &Dataset, cfg: &RunConfig) -> CliResult<(ConfusionMatrix, Metrics)> {
    let cm = evaluate(params, data, cfg.train.execution)?;
    let m = summarize(&cm)?;
    Ok((cm, m))
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    start(cfg, out)?;
    let data = synth_generate(&Rng::new(cfg.seed), &cfg.synth)?;
    let path = out.join("data.csv");
    save_csv(&data, &path)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: CellParams,
    pub log: TrainLog,
    pub metrics: Metrics,
    pub corrupted_metrics: Option<Metrics>,
}

fn write_run(
    cfg: &RunConfig,
    out: &Path,
    params: &CellParams,
    stats: &NormStats,
    prepared: &Prepared,
) -> CliResult<(Metrics, Option<Metrics>)> {
    save_model(
        &SavedModel {
            params: params.clone(),
            normalization: Some(stats.clone()),
        },
        out.join("model.bin"),
    )?;
    let (cm, metrics) = score(params, &prepared.test, cfg)?;
    write(out.join("metrics.txt"), metrics.to_text())?;
    write(out.join("confusion.csv"), cm.to_csv())?;
    let corrupted = if is_corrupting(cfg) {
        let (cm, m) = score(params, &prepared.test_corrupted, cfg)?;
        write(out.join("metrics_corrupted.txt"), m.to_text())?;
        write(out.join("confusion_corrupted.csv"), cm.to_csv())?;
        Some(m)
    } else {
        None
    };
    Ok((metrics, corrupted))
}

/// Split, normalize, train `cfg.model` at `cfg.lambda`, evaluate on test.
pub fn cmd_train(cfg: &RunConfig, data: Option<&Path>, out: &Path) -> CliResult<TrainOutcome> {
    start(cfg, out)?;
    let dataset = source_data(cfg, data, cfg.seed)?;
    let prepared = prepare(cfg, &dataset, cfg.seed)?;
    let (params, log) = train(cfg.model, &prepared.train, &prepared.val, &cfg.train_config(cfg.seed))?;
    write(out.join("train_log.csv"), log.to_csv())?;
    write(out.join("train_summary.txt"), log.summary())?;
    let (metrics, corrupted_metrics) = write_run(cfg, out, &params, &prepared.stats, &prepared)?;
    Ok(TrainOutcome {
        params,
        log,
        metrics,
        corrupted_metrics,
    })
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub sweep: SweepResult,
    pub metrics: Metrics,
    pub corrupted_metrics: Option<Metrics>,
}

/// Trains `cfg.model` once per λ in `cfg.lambda_grid` and keeps the best.
pub fn cmd_sweep(cfg: &RunConfig, data: Option<&Path>, out: &Path) -> CliResult<SweepOutcome> {
    if !cfg.model.is_regularized() {
        return Err(CliError::Usage(format!(
            "sweep needs a regularized model (rc-gru or rc-lstm), got {}",
            cfg.model
        )));
    }
    start(cfg, out)?;
    let dataset = source_data(cfg, data, cfg.seed)?;
    let prepared = prepare(cfg, &dataset, cfg.seed)?;
    let sweep = lambda_sweep(
        cfg.model,
        &prepared.train,
        &prepared.val,
        &cfg.train_config(cfg.seed),
        &cfg.lambda_grid,
    )?;
    write(out.join("sweep.csv"), sweep.to_csv())?;
    for run in &sweep.runs {
        write(out.join(format!("train_log_lambda_{}.csv", run.lambda)), run.log.to_csv())?;
    }
    let best = sweep.best();
    write(
        out.join("sweep_summary.txt"),
        format!("selected_lambda = {}\n{}", best.lambda, best.log.summary()),
    )?;
    let (metrics, corrupted_metrics) = write_run(cfg, out, &best.params, &prepared.stats, &prepared)?;
    Ok(SweepOutcome {
        sweep,
        metrics,
        corrupted_metrics,
    })
}

/// One trained model evaluated on one seed's (possibly corrupted) test split.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRun {
    pub seed: u64,
    pub model: ModelKind,
    pub lambda: f64,
    pub best_epoch: usize,
    pub val_l_rc: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub model: ModelKind,
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOutcome {
    pub runs: Vec<CompareRun>,
    pub rows: Vec<CompareRow>,
}

impl CompareOutcome {
    pub fn row(&self, model: ModelKind) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

const COMPARE_MODELS: [ModelKind; 3] = [ModelKind::Lstm, ModelKind::Gru, ModelKind::RcGru];

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(runs: &[CompareRun]) -> Vec<CompareRow> {
    COMPARE_MODELS
        .iter()
        .map(|&model| {
            let rows: Vec<[f64; 4]> = runs
                .iter()
                .filter(|r| r.model == model)
                .map(|r| r.metrics.as_array())
                .collect();
            let mut mean = [0.0; 4];
            let mut std = [0.0; 4];
            for j in 0..4 {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                (mean[j], std[j]) = mean_std(&col);
            }
            CompareRow { model, mean, std }
        })
        .collect()
}

const METRIC_NAMES: [&str; 4] = ["accuracy", "precision_macro", "recall_macro", "f1_macro"];

fn runs_csv(runs: &[CompareRun]) -> String {
    let mut out = format!("seed,model,lambda,best_epoch,val_l_rc,{}\n", METRIC_NAMES.join(","));
    for r in runs {
        let m = r.metrics.as_array();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.seed, r.model, r.lambda, r.best_epoch, r.val_l_rc, m[0], m[1], m[2], m[3]
        );
    }
    out
}

fn table_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("model");
    for name in METRIC_NAMES {
        let _ = write!(out, ",{name}_mean,{name}_std");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.model.to_string());
        for j in 0..4 {
            let _ = write!(out, ",{},{}", r.mean[j], r.std[j]);
        }
        out.push('\n');
    }
    out
}

fn table_text(rows: &[CompareRow], n_seeds: usize, cfg: &RunConfig) -> String {
    let mut out = format!(
        "# {n_seeds} seed(s), test noise_std = {}, test missing_frac = {}; percent, mean ± std\n",
        cfg.test_noise_std, cfg.test_missing_frac
    );
    let _ = writeln!(
        out,
        "{:<8} {:>13} {:>13} {:>13} {:>13}",
        "model", "Accuracy", "Precision", "Recall", "F1"
    );
    for r in rows {
        let _ = write!(out, "{:<8}", r.model.to_string());
        for j in 0..4 {
            let cell = format!("{:.1} ± {:.1}", 100.0 * r.mean[j], 100.0 * r.std[j]);
            let _ = write!(out, " {cell:>13}");
        }
        out.push('\n');
    }
    out
}

/// LSTM, GRU and RC-GRU (λ by sweep) on the same splits for `n_seeds`
/// consecutive seeds starting at `cfg.seed`, scored on the corrupted test split.
pub fn cmd_compare(cfg: &RunConfig, data: Option<&Path>, out: &Path) -> CliResult<CompareOutcome> {
    start(cfg, out)?;
    let loaded = data.map(load_csv).transpose()?;
    let mut runs = Vec::new();
    for seed in (0..cfg.n_seeds as u64).map(|i| cfg.seed.wrapping_add(i)) {
        let dataset = match &loaded {
            Some(d) => d.clone(),
            None => synth_generate(&Rng::new(seed), &cfg.synth)?,
        };
        let p = prepare(cfg, &dataset, seed)?;
        let tc = cfg.train_config(seed);
        let mut push = |model, lambda, params: &CellParams, log: &TrainLog| -> CliResult<()> {
            let (_, metrics) = score(params, &p.test_corrupted, cfg)?;
            runs.push(CompareRun {
                seed,
                model,
                lambda,
                best_epoch: log.best_epoch,
                val_l_rc: log.best().val.l_rc,
                metrics,
            });
            Ok(())
        };
        for model in [ModelKind::Lstm, ModelKind::Gru] {
            let (params, log) = train(model, &p.train, &p.val, &tc)?;
            push(model, 0.0, &params, &log)?;
        }
        let sweep = lambda_sweep(ModelKind::RcGru, &p.train, &p.val, &tc, &cfg.lambda_grid)?;
        let best = sweep.best();
        push(ModelKind::RcGru, best.lambda, &best.params, &best.log)?;
    }
    let rows = aggregate(&runs);
    write(out.join("compare_runs.csv"), runs_csv(&runs))?;
    write(out.join("compare.csv"), table_csv(&rows))?;
    write(out.join("compare.txt"), table_text(&rows, cfg.n_seeds, cfg))?;
    Ok(CompareOutcome { runs, rows })
}

/// The data a saved model is evaluated on: the file if given, else the
/// synthetic test split for `cfg.seed`. The configured corruption is applied
/// to the raw values, then the model's own normalization.
fn eval_data(cfg: &RunConfig, model: &SavedModel, data: Option<&Path>) -> CliResult<Dataset> {
    let raw = match data {
        Some(path) => load_csv(path)?,
        None => {
            let d = synth_generate(&Rng::new(cfg.seed), &cfg.synth)?;
            patient_split(&d, &cfg.split_spec(cfg.seed))?.2
        }
    };
    for (op, expected, found) in [
        ("model input dim", model.params.input_dim, raw.input_dim),
        ("model class count", model.params.num_classes, raw.num_classes),
    ] {
        if expected != found {
            return Err(rcgrf::Error::Shape { op, expected, found }.into());
        }
    }
    let corrupted = corrupt_for_test(cfg, &raw, cfg.seed)?;
    Ok(match &model.normalization {
        Some(stats) => stats.apply(&corrupted)?,
        None => corrupted,
    })
}

pub fn cmd_eval(cfg: &RunConfig, model_path: &Path, data: Option<&Path>, out: &Path) -> CliResult<Metrics> {
    start(cfg, out)?;
    let model = load_model(model_path)?;
    let dataset = eval_data(cfg, &model, data)?;
    let (cm, metrics) = score(&model.params, &dataset, cfg)?;
    write(out.join("metrics.txt"), metrics.to_text())?;
    write(out.join("confusion.csv"), cm.to_csv())?;
    Ok(metrics)
}

#[derive(Debug, Clone)]
pub struct DriftOutcome {
    pub reports: Vec<DriftReport>,
    pub summary: DriftSummary,
}

/// Per-sequence drift reports for a saved model, with `cfg.lambda` used
/// only for the reported bound.
pub fn cmd_drift(cfg: &RunConfig, model_path: &Path, data: Option<&Path>, out: &Path) -> CliResult<DriftOutcome> {
    start(cfg, out)?;
    let model = load_model(model_path)?;
    let dataset = eval_data(cfg, &model, data)?;
    let seq_dir = out.join("sequences");
    ensure_dir(&seq_dir)?;

    let mut reports = Vec::with_capacity(dataset.len());
    let mut table = String::from(
        "index,patient_id,record_id,label,mean_drift,max_drift,l_rc,algebraic_bound_rhs,lambda_bound_rhs,lambda_bound_holds,drifting_steps\n",
    );
    for (i, s) in dataset.samples.iter().enumerate() {
        let tr = forward_from_zero(&model.params, &s.inputs)?;
        let r = trajectory_drift(&tr, cfg.train.lambda, cfg.drift)?;
        write(seq_dir.join(format!("seq_{i:04}.csv")), r.to_csv())?;
        let _ = writeln!(
            table,
            "{i},{},{},{},{},{},{},{},{},{},{}",
            s.patient_id,
            s.record_id,
            s.label,
            r.mean_drift,
            r.max_drift,
            r.l_rc,
            r.algebraic_bound_rhs,
            r.lambda_bound_rhs,
            r.lambda_bound_holds,
            r.drifting_steps
        );
        reports.push(r);
    }
    let summary = DriftSummary::from_reports(&reports)
        .ok_or_else(|| CliError::Usage("no sequences to report on".into()))?;
    write(out.join("drift_summary.csv"), table)?;
    write(
        out.join("summary.txt"),
        format!("lambda = {}\n{}", cfg.train.lambda, summary.to_text()),
    )?;

    let labels: Vec<String> = dataset
        .samples
        .iter()
        .map(|s| format!("{}/{}", s.patient_id, s.record_id))
        .collect();
    let series: Vec<Series> = reports
        .iter()
        .zip(&labels)
        .take(cfg.drift_plot_sequences)
        .map(|(r, label)| Series {
            label,
            points: r
                .per_step_drift
                .iter()
                .enumerate()
                .map(|(i, &d)| ((i + 2) as f64, d))
                .collect(),
        })
        .collect();
    write(
        out.join("drift.svg"),
        line_chart("hidden-state drift", "t", "||h_t - h_{t-1}||", &series),
    )?;
    Ok(DriftOutcome { reports, summary })
}
