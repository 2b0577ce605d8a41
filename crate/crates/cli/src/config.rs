//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown or repeated keys are rejected. Values given on the
//! command line are applied after the file and win.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rcgrf::data::SynthConfig;
use rcgrf::diagnostics::{DriftOptions, DEFAULT_DRIFT_THRESHOLD, DEFAULT_EPSILON};
use rcgrf::train::DEFAULT_LAMBDA_GRID;
use rcgrf::{Execution, ModelKind, SplitSpec, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub split: SplitSpec,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub lambda_grid: Vec<f64>,
    pub n_seeds: usize,
    pub test_noise_std: f64,
    pub test_missing_frac: f64,
    pub drift: DriftOptions,
    pub drift_plot_sequences: usize,
}

/// Every accepted key, in the order `to_text` writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "n_patients",
    "sequences_per_patient",
    "num_classes",
    "input_dim",
    "window_length",
    "noise_std",
    "missing_frac",
    "train_frac",
    "val_frac",
    "test_frac",
    "model",
    "lambda",
    "learning_rate",
    "batch_size",
    "hidden_dim",
    "max_epochs",
    "patience",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "grad_clip_norm",
    "execution",
    "lambda_grid",
    "n_seeds",
    "test_noise_std",
    "test_missing_frac",
    "drift_epsilon",
    "drift_threshold",
    "drift_plot_sequences",
];

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SynthConfig::default(),
            split: SplitSpec::default(),
            model: ModelKind::RcGru,
            train: TrainConfig::default(),
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            n_seeds: 5,
            test_noise_std: 0.0,
            test_missing_frac: 0.0,
            drift: DriftOptions {
                epsilon: DEFAULT_EPSILON,
                threshold: DEFAULT_DRIFT_THRESHOLD,
            },
            drift_plot_sequences: 5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| CliError::Config {
        key: key.to_string(),
        message: format!("cannot parse `{value}`: {e}"),
    })
}

fn parse_grid(key: &str, value: &str) -> CliResult<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse::<f64>(key, v.trim()))
        .collect()
}

fn fmt_grid(grid: &[f64]) -> String {
    grid.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse_str(text: &str) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Syntax {
                line: i as u64 + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(CliError::Syntax {
                    line: i as u64 + 1,
                    message: format!("key `{key}` given twice"),
                });
            }
            seen.push(key);
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| rcgrf::Error::io(path, e))?;
        RunConfig::parse_str(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "n_patients" => self.synth.n_patients = parse(key, value)?,
            "sequences_per_patient" => self.synth.sequences_per_patient = parse(key, value)?,
            "num_classes" => self.synth.num_classes = parse(key, value)?,
            "input_dim" => self.synth.input_dim = parse(key, value)?,
            "window_length" => self.synth.window_length = parse(key, value)?,
            "noise_std" => self.synth.noise_std = parse(key, value)?,
            "missing_frac" => self.synth.missing_frac = parse(key, value)?,
            "train_frac" => self.split.train_frac = parse(key, value)?,
            "val_frac" => self.split.val_frac = parse(key, value)?,
            "test_frac" => self.split.test_frac = parse(key, value)?,
            "model" => self.model = parse(key, value)?,
            "lambda" => self.train.lambda = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "hidden_dim" => self.train.hidden_dim = parse(key, value)?,
            "max_epochs" => self.train.max_epochs = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "adam_beta1" => self.train.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.train.adam_beta2 = parse(key, value)?,
            "adam_epsilon" => self.train.adam_epsilon = parse(key, value)?,
            "grad_clip_norm" => {
                self.train.grad_clip_norm = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "execution" => {
                self.train.execution = match value {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    other => {
                        return Err(CliError::Config {
                            key: key.into(),
                            message: format!("expected `parallel` or `sequential`, got `{other}`"),
                        })
                    }
                }
            }
            "lambda_grid" => self.lambda_grid = parse_grid(key, value)?,
            "n_seeds" => self.n_seeds = parse(key, value)?,
            "test_noise_std" => self.test_noise_std = parse(key, value)?,
            "test_missing_frac" => self.test_missing_frac = parse(key, value)?,
            "drift_epsilon" => self.drift.epsilon = parse(key, value)?,
            "drift_threshold" => self.drift.threshold = parse(key, value)?,
            "drift_plot_sequences" => self.drift_plot_sequences = parse(key, value)?,
            other => return Err(CliError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> CliResult<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| CliError::Config {
                key: o.to_string(),
                message: "override must look like key=value".into(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Train config with the run seed folded in.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec { seed, ..self.split }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |key: &str, message: &str| {
            Err(CliError::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        let s = &self.synth;
        if s.n_patients == 0 || s.sequences_per_patient == 0 {
            return bad("n_patients", "patients and sequences per patient must be > 0");
        }
        if s.num_classes < 2 {
            return bad("num_classes", "must be >= 2");
        }
        if s.input_dim == 0 {
            return bad("input_dim", "must be > 0");
        }
        if s.window_length < 2 {
            return bad("window_length", "must be >= 2");
        }
        if !(s.noise_std >= 0.0) || !s.noise_std.is_finite() {
            return bad("noise_std", "must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&s.missing_frac) {
            return bad("missing_frac", "must be in [0, 1)");
        }
        self.split.validate()?;
        self.train.validate()?;
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return bad("lambda_grid", "needs one or more finite values >= 0");
        }
        if self.n_seeds == 0 {
            return bad("n_seeds", "must be > 0");
        }
        if !(self.test_noise_std >= 0.0) || !self.test_noise_std.is_finite() {
            return bad("test_noise_std", "must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.test_missing_frac) {
            return bad("test_missing_frac", "must be in [0, 1)");
        }
        if !(self.drift.epsilon > 0.0) || !self.drift.epsilon.is_finite() {
            return bad("drift_epsilon", "must be finite and > 0");
        }
        if !(self.drift.threshold > 0.0) {
            return bad("drift_threshold", "must be > 0");
        }
        Ok(())
    }

    /// The whole configuration in file syntax, one key per line.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "seed" => self.seed.to_string(),
                "n_patients" => self.synth.n_patients.to_string(),
                "sequences_per_patient" => self.synth.sequences_per_patient.to_string(),
                "num_classes" => self.synth.num_classes.to_string(),
                "input_dim" => self.synth.input_dim.to_string(),
                "window_length" => self.synth.window_length.to_string(),
                "noise_std" => self.synth.noise_std.to_string(),
                "missing_frac" => self.synth.missing_frac.to_string(),
                "train_frac" => self.split.train_frac.to_string(),
                "val_frac" => self.split.val_frac.to_string(),
                "test_frac" => self.split.test_frac.to_string(),
                "model" => self.model.to_string(),
                "lambda" => t.lambda.to_string(),
                "learning_rate" => t.learning_rate.to_string(),
                "batch_size" => t.batch_size.to_string(),
                "hidden_dim" => t.hidden_dim.to_string(),
                "max_epochs" => t.max_epochs.to_string(),
                "patience" => t.patience.to_string(),
                "adam_beta1" => t.adam_beta1.to_string(),
                "adam_beta2" => t.adam_beta2.to_string(),
                "adam_epsilon" => t.adam_epsilon.to_string(),
                "grad_clip_norm" => t.grad_clip_norm.map_or("none".into(), |v| v.to_string()),
                "execution" => match t.execution {
                    Execution::Parallel => "parallel".into(),
                    Execution::Sequential => "sequential".into(),
                },
                "lambda_grid" => fmt_grid(&self.lambda_grid),
                "n_seeds" => self.n_seeds.to_string(),
                "test_noise_std" => self.test_noise_std.to_string(),
                "test_missing_frac" => self.test_missing_frac.to_string(),
                "drift_epsilon" => self.drift.epsilon.to_string(),
                "drift_threshold" => self.drift.threshold.to_string(),
                "drift_plot_sequences" => self.drift_plot_sequences.to_string(),
                _ => unreachable!("key list and match are out of sync"),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}
