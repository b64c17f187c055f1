//! Supervised fitting of the graybox to simulated fidelities.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::{backward_params, forward_with_context, ControlContext, Mode, ModelConfig, ModelParameters};
use crate::error::{param_err, Error, Result};
use crate::linalg::{pairwise_sum, pairwise_sum_rows, pairwise_sum_vecs};
use crate::noise::RngSeed;
use crate::simulator::DatasetRecord;
use crate::whitebox::Gate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub split_ratio: f64,
    pub shuffle_seed: RngSeed,
    /// Evaluate the training split in eval mode after every epoch.
    pub track_eval_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 200,
            peak_lr: 1e-3,
            warmup_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            split_ratio: 0.8,
            shuffle_seed: RngSeed(0),
            track_eval_loss: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(param_err("batch_size and epochs must be positive"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(param_err("split_ratio must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(param_err("warmup_fraction must lie in [0, 1)"));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return Err(param_err("peak_lr must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Per-gate batch MSE summed over gates.
pub fn loss(predicted: &[[f64; Gate::COUNT]], labels: &[[f64; Gate::COUNT]]) -> f64 {
    per_gate_mse(predicted, labels).iter().sum()
}

pub fn per_gate_mse(predicted: &[[f64; Gate::COUNT]], labels: &[[f64; Gate::COUNT]]) -> [f64; Gate::COUNT] {
    assert_eq!(predicted.len(), labels.len());
    if predicted.is_empty() {
        return [0.0; Gate::COUNT];
    }
    let squares: Vec<[f64; Gate::COUNT]> = predicted
        .iter()
        .zip(labels)
        .map(|(p, l)| std::array::from_fn(|g| (p[g] - l[g]).powi(2)))
        .collect();
    pairwise_sum_rows(&squares).map(|s| s / predicted.len() as f64)
}

/// Linear warmup to the peak, then half-cosine decay to zero.
pub fn lr_schedule(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    let warmup = (config.warmup_fraction * total_steps as f64).round() as usize;
    if step < warmup {
        return config.peak_lr * step as f64 / warmup as f64;
    }
    let decay = total_steps.saturating_sub(warmup);
    if decay == 0 {
        return config.peak_lr;
    }
    let progress = ((step - warmup) as f64 / decay as f64).min(1.0);
    config.peak_lr * 0.5 * (1.0 + (PI * progress).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, config: &TrainConfig) {
    assert_eq!(params.len(), grads.len());
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}

/// Seeded shuffle of 0..n; the first round(ratio·n) indices train.
pub fn split_indices(n: usize, ratio: f64, seed: RngSeed) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.rng());
    let cut = ((ratio * n as f64).round() as usize).min(n);
    let test = order.split_off(cut);
    (order, test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean train-mode batch loss.
    pub batch_loss: f64,
    /// Eval-mode loss on the training split, if tracked.
    pub eval_loss: Option<f64>,
    pub final_lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub train_mse: [f64; Gate::COUNT],
    pub test_mse: [f64; Gate::COUNT],
    /// √(mean test MSE over gates).
    pub prediction_error: f64,
    pub train_count: usize,
    pub test_count: usize,
    pub split_seed: RngSeed,
    pub history: Vec<EpochStats>,
}

impl Metrics {
    pub fn mean_test_mse(&self) -> f64 {
        self.test_mse.iter().sum::<f64>() / Gate::COUNT as f64
    }

    pub fn mean_train_mse(&self) -> f64 {
        self.train_mse.iter().sum::<f64>() / Gate::COUNT as f64
    }
}

/// Control unitaries for every record, computed once per dataset.
pub fn control_contexts(records: &[DatasetRecord], config: &ModelConfig) -> Result<Vec<ControlContext>> {
    records
        .par_iter()
        .map(|r| ControlContext::new(&r.input, config.whitebox_steps, false))
        .collect()
}

/// Eval-mode fidelity predictions for the selected records.
pub fn predict(
    params: &ModelParameters,
    records: &[DatasetRecord],
    contexts: &[ControlContext],
    indices: &[usize],
) -> Result<Vec<[f64; Gate::COUNT]>> {
    indices
        .par_iter()
        .map(|&i| Ok(forward_with_context(params, &records[i].input, &contexts[i], Mode::Eval, RngSeed(0))?.fidelities))
        .collect()
}

pub fn evaluate(
    params: &ModelParameters,
    records: &[DatasetRecord],
    contexts: &[ControlContext],
    indices: &[usize],
) -> Result<[f64; Gate::COUNT]> {
    let predicted = predict(params, records, contexts, indices)?;
    let labels: Vec<_> = indices.iter().map(|&i| records[i].fidelities).collect();
    Ok(per_gate_mse(&predicted, &labels))
}

/// Batch loss and summed parameter gradient, reduced in fixed pairwise order.
fn batch_gradient(
    params: &ModelParameters,
    records: &[DatasetRecord],
    contexts: &[ControlContext],
    batch: &[usize],
    seed: RngSeed,
) -> Result<(f64, Vec<f64>)> {
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|&i| {
            let out = forward_with_context(params, &records[i].input, &contexts[i], Mode::Train, seed.derive(i as u64))?;
            let label = &records[i].fidelities;
            let residual: [f64; Gate::COUNT] = std::array::from_fn(|g| out.fidelities[g] - label[g]);
            let dl = residual.map(|r| 2.0 * r * scale);
            let grad = backward_params(params, &out.trace, &dl)?;
            Ok((residual.iter().map(|r| r * r).sum::<f64>() * scale, grad))
        })
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let grads: Vec<Vec<f64>> = parts.into_iter().map(|p| p.1).collect();
    Ok((pairwise_sum(&losses), pairwise_sum_vecs(&grads)))
}

/// Fits a freshly initialized model; the result depends only on the inputs,
/// not on the thread count.
pub fn train(
    dataset: &[DatasetRecord],
    model_config: &ModelConfig,
    config: &TrainConfig,
    seed: RngSeed,
) -> Result<(ModelParameters, Metrics)> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(param_err("training needs at least two records"));
    }
    let params = ModelParameters::init(model_config.clone(), seed.derive(0))?;
    train_from(params, dataset, config, seed)
}

/// Continues training from the given parameters.
pub fn train_from(
    mut params: ModelParameters,
    dataset: &[DatasetRecord],
    config: &TrainConfig,
    seed: RngSeed,
) -> Result<(ModelParameters, Metrics)> {
    config.validate()?;
    let (train_idx, test_idx) = split_indices(dataset.len(), config.split_ratio, config.shuffle_seed);
    if train_idx.is_empty() {
        return Err(param_err("training split is empty"));
    }
    let contexts = control_contexts(dataset, params.config())?;
    let batches_per_epoch = train_idx.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut adam = AdamState::new(params.len());
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    let mut order = train_idx.clone();

    for epoch in 0..config.epochs {
        let epoch_seed = seed.derive(1 + epoch as u64);
        order.copy_from_slice(&train_idx);
        order.shuffle(&mut epoch_seed.rng());
        let mut batch_losses = Vec::with_capacity(batches_per_epoch);
        let mut lr = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let diverged = |reason: String, params: &ModelParameters| Error::Diverged {
                epoch,
                step,
                reason,
                last_good: Box::new(params.clone()),
            };
            let (batch_loss, grad) =
                match batch_gradient(&params, dataset, &contexts, batch, epoch_seed.derive(1 + b as u64)) {
                    Ok(v) => v,
                    Err(Error::NonFinite { layer }) => {
                        return Err(diverged(format!("non-finite activation in {layer}"), &params))
                    }
                    Err(e) => return Err(e),
                };
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged("non-finite loss or gradient".into(), &params));
            }
            lr = lr_schedule(step, total_steps, config);
            let mut values = params.to_flat();
            adam_step(&mut values, &grad, &mut adam, lr, config);
            params.set_values(&values)?;
            batch_losses.push(batch_loss);
            step += 1;
        }
        let batch_loss = pairwise_sum(&batch_losses) / batch_losses.len() as f64;
        let eval_loss = if config.track_eval_loss {
            Some(evaluate(&params, dataset, &contexts, &train_idx)?.iter().sum())
        } else {
            None
        };
        log::info!("epoch {epoch}: batch loss {batch_loss:.4e}, eval loss {eval_loss:?}, lr {lr:.2e}");
        history.push(EpochStats { epoch, batch_loss, eval_loss, final_lr: lr });
    }

    let train_mse = evaluate(&params, dataset, &contexts, &train_idx)?;
    let test_mse = if test_idx.is_empty() { [0.0; Gate::COUNT] } else { evaluate(&params, dataset, &contexts, &test_idx)? };
    let prediction_error = (test_mse.iter().sum::<f64>() / Gate::COUNT as f64).sqrt();
    let metrics = Metrics {
        train_mse,
        test_mse,
        prediction_error,
        train_count: train_idx.len(),
        test_count: test_idx.len(),
        split_seed: config.shuffle_seed,
        history,
    };
    Ok((params, metrics))
}
