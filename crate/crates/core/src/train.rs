//! Empirical-risk training with Adam, dataset splitting and metrics.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Model, ParamSet, Tape};
use crate::par;
use crate::synth::{derive_seed, rng_from_seed, Sample, Target, TaskDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 25,
            epochs: 100,
            weight_decay: 1e-4,
            seed: 0,
            loss: LossKind::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.batch_size == 0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidParams(format!("bad training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nmse: Option<f64>,
    pub accuracy: Option<f64>,
    pub train_time_s: f64,
    pub inference_time_s: f64,
}

impl Metrics {
    pub fn wall_time_s(&self) -> f64 {
        self.train_time_s + self.inference_time_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Seeded 70 / 20 / 10 split; rounding leftovers go to training.
pub fn split_dataset(ds: &TaskDataset, seed: u64) -> Result<(TaskDataset, TaskDataset, TaskDataset)> {
    let m = ds.len();
    if m < 10 {
        return Err(Error::TooFewSamples { needed: 10, got: m });
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n_val = m * 2 / 10;
    let n_test = m / 10;
    let n_train = m - n_val - n_test;
    Ok((
        ds.subset(&idx[..n_train]),
        ds.subset(&idx[n_train..n_train + n_val]),
        ds.subset(&idx[n_train + n_val..]),
    ))
}

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    t: u32,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam step using the gradients stored on `params`, with decoupled
/// weight decay `θ ← θ (1 - lr·wd)` applied before the moment update.
/// Parameters without a gradient are treated as having a zero gradient.
pub fn adam_step(
    params: &mut ParamSet,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if state.m.is_empty() {
        state.m = params
            .tensors()
            .iter()
            .map(|t| DMatrix::zeros(t.rows(), t.cols()))
            .collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer tracks {} tensors, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch(format!("optimizer state for tensor {i}")));
        }
        if let Some(g) = &p.grad {
            if g.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch(format!("gradient for tensor {i}")));
            }
        }
        if weight_decay != 0.0 {
            p.value *= 1.0 - lr * weight_decay;
        }
        for k in 0..p.value.len() {
            let g = p.grad.as_ref().map_or(0.0, |g| g[k]);
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            p.value[k] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Stacks sample inputs into one `(B·n) × F` matrix.
pub fn stack_inputs(samples: &[&Sample]) -> Result<DMatrix<f64>> {
    let first = samples
        .first()
        .ok_or(Error::TooFewSamples { needed: 1, got: 0 })?;
    let (n, f) = first.input.shape();
    let mut x = DMatrix::zeros(n * samples.len(), f);
    for (b, s) in samples.iter().enumerate() {
        if s.input.shape() != (n, f) {
            return Err(Error::ShapeMismatch(format!(
                "sample input {:?} vs {:?}",
                s.input.shape(),
                (n, f)
            )));
        }
        x.rows_mut(b * n, n).copy_from(&s.input);
    }
    Ok(x)
}

/// Records the forward pass and loss for one minibatch.
fn record_loss<'a>(
    tape: &mut Tape<'a>,
    model: &'a Model,
    params: &ParamSet,
    ds: &TaskDataset,
    batch: &[&Sample],
    loss: LossKind,
) -> Result<crate::nn::Var> {
    let n = ds.n();
    let x = tape.input(stack_inputs(batch)?);
    let out = model.forward(tape, params, x)?;
    match loss {
        LossKind::Mse => {
            let mut y = DMatrix::zeros(n * batch.len(), 1);
            for (b, s) in batch.iter().enumerate() {
                let Target::Signal { observed, .. } = &s.target else {
                    return Err(Error::InvalidParams("MSE loss needs signal targets".into()));
                };
                y.rows_mut(b * n, n).copy_from_slice(observed);
            }
            tape.mse(out, y, n, ds.target_mask.as_deref())
        }
        LossKind::CrossEntropy => {
            let labels = batch
                .iter()
                .map(|s| match s.target {
                    Target::Label(l) => Ok(l),
                    _ => Err(Error::InvalidParams("cross-entropy needs label targets".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            tape.cross_entropy(out, n, &ds.candidates, &labels)
        }
    }
}

/// Forward + backward on one minibatch; gradients are written onto `params`
/// (previous gradients cleared). Returns the batch loss.
pub fn loss_and_grad(
    model: &Model,
    params: &mut ParamSet,
    ds: &TaskDataset,
    batch: &[&Sample],
    loss: LossKind,
) -> Result<f64> {
    params.zero_grad();
    let mut tape = Tape::new();
    let l = record_loss(&mut tape, model, params, ds, batch, loss)?;
    let value = tape.value(l)[(0, 0)];
    tape.backward(l, params)?;
    Ok(value)
}

/// Loss without gradients.
pub fn batch_loss(
    model: &Model,
    params: &ParamSet,
    ds: &TaskDataset,
    batch: &[&Sample],
    loss: LossKind,
) -> Result<f64> {
    let mut tape = Tape::new();
    let l = record_loss(&mut tape, model, params, ds, batch, loss)?;
    Ok(tape.value(l)[(0, 0)])
}

const EVAL_CHUNK: usize = 100;

/// Sample-weighted mean loss over a whole dataset, evaluated in parallel
/// chunks.
pub fn dataset_loss(model: &Model, params: &ParamSet, ds: &TaskDataset, loss: LossKind) -> Result<f64> {
    if ds.is_empty() {
        return Ok(f64::NAN);
    }
    let refs: Vec<&Sample> = ds.samples.iter().collect();
    let chunks: Vec<&[&Sample]> = refs.chunks(EVAL_CHUNK).collect();
    let parts = par::map(&chunks, |c| {
        batch_loss(model, params, ds, c, loss).map(|l| l * c.len() as f64)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / ds.len() as f64)
}

/// Model outputs (`n × F_out` per sample), evaluated in parallel chunks.
pub fn predict_dataset(model: &Model, params: &ParamSet, ds: &TaskDataset) -> Result<Vec<DMatrix<f64>>> {
    let n = ds.n();
    let refs: Vec<&Sample> = ds.samples.iter().collect();
    let chunks: Vec<&[&Sample]> = refs.chunks(EVAL_CHUNK).collect();
    let parts = par::map(&chunks, |c| -> Result<Vec<DMatrix<f64>>> {
        let out = model.predict(params, &stack_inputs(c)?)?;
        Ok((0..c.len()).map(|b| out.rows(b * n, n).into_owned()).collect())
    });
    let mut preds = Vec::with_capacity(ds.len());
    for p in parts {
        preds.extend(p?);
    }
    Ok(preds)
}

/// Per-epoch training record plus the epoch whose parameters were kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Minibatch Adam on the empirical risk. Each epoch reshuffles the training
/// set; the parameters with the lowest validation loss are returned. Only
/// `train` and `val` are visible here.
pub fn train_model(
    model: &Model,
    init: ParamSet,
    train: &TaskDataset,
    val: &TaskDataset,
    cfg: &TrainConfig,
) -> Result<(ParamSet, History)> {
    cfg.validate()?;
    let mut params = init;
    let mut history = History::default();
    if cfg.epochs == 0 || train.is_empty() {
        return Ok((params, history));
    }
    let mut state = AdamState::default();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x74_7261_696e));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, params.clone());
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train.samples[i]).collect();
            let l = loss_and_grad(model, &mut params, train, &batch, cfg.loss)?;
            if !l.is_finite() {
                return Err(Error::Numerical(format!("loss diverged at epoch {epoch}")));
            }
            adam_step(&mut params, &mut state, cfg.learning_rate, cfg.weight_decay)?;
            total += l * batch.len() as f64;
        }
        params.zero_grad();
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            dataset_loss(model, &params, val, cfg.loss)?
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, params.clone());
            history.best_epoch = Some(epoch);
        }
    }
    Ok((best.1, history))
}

/// `(1/T) Σ_t ‖y_t − ŷ_t‖² / ‖y_t‖²`, optionally restricted to masked nodes.
pub fn nmse(preds: &[Vec<f64>], targets: &[Vec<f64>], mask: Option<&[bool]>) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch(preds.len(), targets.len()));
    }
    if targets.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for (t, (p, y)) in preds.iter().zip(targets).enumerate() {
        if p.len() != y.len() {
            return Err(Error::LengthMismatch(p.len(), y.len()));
        }
        let (mut err, mut norm) = (0.0, 0.0);
        for i in 0..y.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            err += (y[i] - p[i]).powi(2);
            norm += y[i] * y[i];
        }
        if norm == 0.0 {
            return Err(Error::ZeroNormTarget(t));
        }
        total += err / norm;
    }
    Ok(total / targets.len() as f64)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Arg-max over the candidate logits of each prediction.
pub fn predicted_labels(preds: &[DMatrix<f64>], candidates: &[usize]) -> Vec<usize> {
    preds
        .iter()
        .map(|p| {
            let mut best = 0;
            for (j, &c) in candidates.iter().enumerate() {
                if p[(c, 0)] > p[(candidates[best], 0)] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Test metrics for a trained network. Regression is scored against the
/// noise-free targets, on masked nodes only when the dataset has a target
/// mask.
pub fn evaluate(model: &Model, params: &ParamSet, test: &TaskDataset) -> Result<Metrics> {
    let start = Instant::now();
    let preds = predict_dataset(model, params, test)?;
    let mut metrics = score(&preds, test)?;
    metrics.inference_time_s = start.elapsed().as_secs_f64();
    Ok(metrics)
}

/// Metrics for precomputed `n × F_out` predictions.
pub fn score(preds: &[DMatrix<f64>], test: &TaskDataset) -> Result<Metrics> {
    let mut metrics = Metrics::default();
    match test.samples.first().map(|s| &s.target) {
        Some(Target::Label(_)) => {
            let labels: Vec<usize> = test
                .samples
                .iter()
                .map(|s| match s.target {
                    Target::Label(l) => l,
                    _ => usize::MAX,
                })
                .collect();
            metrics.accuracy = Some(accuracy(&predicted_labels(preds, &test.candidates), &labels)?);
        }
        Some(Target::Signal { .. }) => {
            let targets: Vec<Vec<f64>> = test
                .samples
                .iter()
                .map(|s| match &s.target {
                    Target::Signal { clean, .. } => clean.clone(),
                    Target::Label(_) => Vec::new(),
                })
                .collect();
            let p: Vec<Vec<f64>> = preds.iter().map(|p| p.column(0).iter().copied().collect()).collect();
            metrics.nmse = Some(nmse(&p, &targets, test.target_mask.as_deref())?);
        }
        None => {}
    }
    Ok(metrics)
}
