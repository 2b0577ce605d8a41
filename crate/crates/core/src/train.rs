//! Adam, the mini-batch training loop with early stopping, and the λ sweep.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::cells::{forward_from_zero, CellKind, CellParams, ParamGrads, Weights};
use crate::data::{Dataset, SequenceSample};
use crate::error::{check_dim, Error, Result};
use crate::math::{distance, Rng};
use crate::metrics::argmax;
use crate::objective::{batch_gradient, cross_entropy, rc_loss, LossBreakdown};
use crate::parallel::{map_ordered, Execution};

/// Which classifier to train. Regularized kinds use `TrainConfig::lambda`,
/// the others train with λ = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Lstm,
    Gru,
    RcGru,
    RcLstm,
}

impl ModelKind {
    pub fn cell(self) -> CellKind {
        match self {
            ModelKind::Gru | ModelKind::RcGru => CellKind::Gru,
            ModelKind::Lstm | ModelKind::RcLstm => CellKind::Lstm,
        }
    }

    pub fn is_regularized(self) -> bool {
        matches!(self, ModelKind::RcGru | ModelKind::RcLstm)
    }

    pub fn effective_lambda(self, config: &TrainConfig) -> f64 {
        if self.is_regularized() {
            config.lambda
        } else {
            0.0
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Gru => "gru",
            ModelKind::RcGru => "rc-gru",
            ModelKind::RcLstm => "rc-lstm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(ModelKind::Lstm),
            "gru" => Ok(ModelKind::Gru),
            "rc-gru" => Ok(ModelKind::RcGru),
            "rc-lstm" => Ok(ModelKind::RcLstm),
            other => Err(Error::param("model", format!("unknown model `{other}`"))),
        }
    }
}

/// The λ grid searched by [`lambda_sweep`] unless overridden.
pub const DEFAULT_LAMBDA_GRID: [f64; 3] = [0.01, 0.05, 0.1];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub hidden_dim: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub grad_clip_norm: Option<f64>,
    pub execution: Execution,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: 32 hidden units instead of 128.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            lambda: 0.05,
            hidden_dim: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            grad_clip_norm: None,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    /// Full-size protocol: 128 hidden units.
    pub fn full_protocol() -> Self {
        TrainConfig {
            hidden_dim: 128,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate", "must be > 0"));
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::param(name, "must be in (0, 1)"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::param("adam_epsilon", "must be > 0"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::param("lambda", "must be finite and >= 0"));
        }
        if self.patience < 1 {
            return Err(Error::param("patience", "must be >= 1"));
        }
        if self.batch_size < 1 || self.hidden_dim < 1 || self.max_epochs < 1 {
            return Err(Error::param(
                "train",
                "batch_size, hidden_dim and max_epochs must be >= 1",
            ));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::param("grad_clip_norm", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates, shape-congruent with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Weights,
    pub second: Weights,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &CellParams) -> Self {
        let zeros = Weights::zeros(
            params.kind,
            params.input_dim,
            params.hidden_dim,
            params.num_classes,
        );
        AdamState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut CellParams,
    grads: &ParamGrads,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    check_dim("adam gradient size", params.weights.len(), grads.len())?;
    check_dim("adam state size", params.weights.len(), state.first.len())?;
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let eps = config.adam_epsilon;
    let blocks = params
        .weights
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(state.first.slices_mut().into_iter().zip(state.second.slices_mut()));
    for ((p, g), (m, v)) in blocks {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub val_accuracy: f64,
    pub val_mean_drift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub model: ModelKind,
    pub lambda: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainLog {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_l_cls,train_l_rc,train_total,val_l_cls,val_l_rc,val_total,val_accuracy,val_mean_drift\n",
        );
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.train.l_cls,
                e.train.l_rc,
                e.train.total,
                e.val.l_cls,
                e.val.l_rc,
                e.val.total,
                e.val_accuracy,
                e.val_mean_drift
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let b = self.best();
        format!(
            "model = {}\nlambda = {}\nepochs = {}\nbest_epoch = {}\nstop_reason = {}\nbest_val_total = {}\nbest_val_l_rc = {}\nbest_val_accuracy = {}\n",
            self.model,
            self.lambda,
            self.epochs.len(),
            self.best_epoch,
            self.stop_reason,
            b.val.total,
            b.val.l_rc,
            b.val_accuracy
        )
    }
}

/// Loss, accuracy and mean per-step drift over a whole split, one forward
/// pass per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitEval {
    pub loss: LossBreakdown,
    pub accuracy: f64,
    pub mean_drift: f64,
}

pub fn evaluate_split(
    params: &CellParams,
    data: &Dataset,
    lambda: f64,
    exec: Execution,
) -> Result<SplitEval> {
    if data.is_empty() {
        return Err(Error::param("dataset", "empty split"));
    }
    let per_sample = map_ordered(exec, &data.samples, |s: &SequenceSample| -> Result<_> {
        let tr = forward_from_zero(params, &s.inputs)?;
        let logits = params.logits(tr.last())?;
        let (l_cls, _) = cross_entropy(&logits, s.label)?;
        let rc = rc_loss(&tr)?;
        let drift = tr.states.windows(2).map(|w| distance(&w[1], &w[0])).sum::<f64>()
            / (tr.len() - 1) as f64;
        Ok((
            LossBreakdown::new(l_cls, rc.value, lambda),
            argmax(&logits) == s.label,
            drift,
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n = per_sample.len() as f64;
    let losses: Vec<LossBreakdown> = per_sample.iter().map(|p| p.0).collect();
    Ok(SplitEval {
        loss: LossBreakdown::mean(&losses, lambda),
        accuracy: per_sample.iter().filter(|p| p.1).count() as f64 / n,
        mean_drift: per_sample.iter().map(|p| p.2).sum::<f64>() / n,
    })
}

const INIT_STREAM: u64 = 11;
const SHUFFLE_STREAM: u64 = 12;

/// Trains with shuffled mini-batches and early stopping on validation total
/// loss. Returns the parameters of the best validation epoch.
pub fn train(
    model: ModelKind,
    train_data: &Dataset,
    val_data: &Dataset,
    config: &TrainConfig,
) -> Result<(CellParams, TrainLog)> {
    config.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::param("dataset", "train and validation splits must be nonempty"));
    }
    train_data.check_compatible(val_data)?;
    check_dim("validation window length", train_data.window_length, val_data.window_length)?;

    let lambda = model.effective_lambda(config);
    let root = Rng::new(config.seed);
    let mut params = CellParams::init(
        model.cell(),
        train_data.input_dim,
        config.hidden_dim,
        train_data.num_classes,
        &mut root.split(INIT_STREAM),
    )?;
    let mut adam = AdamState::new(&params);
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let n = train_data.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=config.max_epochs {
        root.split(SHUFFLE_STREAM)
            .split(epoch as u64)
            .shuffle(&mut order);
        let (mut cls_sum, mut rc_sum) = (0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SequenceSample> = chunk.iter().map(|&i| &train_data.samples[i]).collect();
            let (loss, mut grads) = batch_gradient(&params, &batch, lambda, config.execution)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            if let Some(max_norm) = config.grad_clip_norm {
                let norm = grads.norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            adam_step(&mut params, &grads, &mut adam, config)?;
            if !params.weights.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            cls_sum += loss.l_cls * batch.len() as f64;
            rc_sum += loss.l_rc * batch.len() as f64;
        }
        let train_loss = LossBreakdown::new(cls_sum / n as f64, rc_sum / n as f64, lambda);
        let val = evaluate_split(&params, val_data, lambda, config.execution)?;
        if !val.loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        epochs.push(EpochRecord {
            epoch,
            train: train_loss,
            val: val.loss,
            val_accuracy: val.accuracy,
            val_mean_drift: val.mean_drift,
        });
        if val.loss.total < best_val {
            best_val = val.loss.total;
            best_params = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    Ok((
        best_params,
        TrainLog {
            model,
            lambda,
            epochs,
            best_epoch,
            stop_reason,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub lambda: f64,
    pub params: CellParams,
    pub log: TrainLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    /// Index into `runs` of the selected λ.
    pub selected: usize,
}

impl SweepResult {
    pub fn best(&self) -> &SweepRun {
        &self.runs[self.selected]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,best_epoch,best_val_total,best_val_l_rc,best_val_accuracy,selected\n");
        for (i, r) in self.runs.iter().enumerate() {
            let b = r.log.best();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.lambda,
                r.log.best_epoch,
                b.val.total,
                b.val.l_rc,
                b.val_accuracy,
                i == self.selected
            );
        }
        out
    }
}

/// Trains a regularized model once per λ with the same seed and picks the
/// λ with the lowest best-epoch validation total loss (ties → smaller λ).
pub fn lambda_sweep(
    model: ModelKind,
    train_data: &Dataset,
    val_data: &Dataset,
    config: &TrainConfig,
    grid: &[f64],
) -> Result<SweepResult> {
    if !model.is_regularized() {
        return Err(Error::param("model", format!("{model} has no λ to sweep")));
    }
    if grid.is_empty() {
        return Err(Error::param("lambda_grid", "grid is empty"));
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::param("lambda_grid", "all λ must be finite and >= 0"));
    }
    let mut runs = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cfg = TrainConfig {
            lambda,
            ..config.clone()
        };
        let (params, log) = train(model, train_data, val_data, &cfg)?;
        runs.push(SweepRun {
            lambda,
            params,
            log,
        });
    }
    let selected = select_lambda(&runs);
    Ok(SweepResult { runs, selected })
}

fn select_lambda(runs: &[SweepRun]) -> usize {
    let key = |r: &SweepRun| (r.log.best().val.total, r.lambda);
    let mut best = 0;
    for (i, r) in runs.iter().enumerate().skip(1) {
        let (v, l) = key(r);
        let (bv, bl) = key(&runs[best]);
        if v < bv || (v == bv && l < bl) {
            best = i;
        }
    }
    best
}
