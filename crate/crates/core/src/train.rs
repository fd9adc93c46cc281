//! Mini-batch training with validation-driven early stopping.
//!
//! Each epoch reshuffles the training samples (Fisher-Yates from the
//! `Shuffle` stream of the config seed), steps the optimizer once per
//! batch, then scores the validation partition on the normalized scale.
//! Training stops after `max_epochs`, or once `patience` consecutive
//! epochs fail to beat the best validation RMSE by more than `min_delta`.
//! The best-validation parameters are restored before returning.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Gradients, Sample};
use crate::error::{Error, Result};
use crate::model::NcpfModel;
use crate::optim::{AdamConfig, Optimizer, OptimizerKind, Parameters};
use crate::preprocess::Preprocessor;
use crate::rng::{self, Stream};
use crate::tensor::{Index3, SparseTensor3, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScaling {
    /// `1/2 * sum` over the batch.
    Sum,
    /// Sum divided by batch size, so the learning rate does not depend on it.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub loss_scaling: LossScaling,
}

pub const DEFAULT_SGD_LR: f64 = 1e-2;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam(AdamConfig::default()),
            batch_size: 1024,
            max_epochs: 1000,
            patience: 10,
            min_delta: 1e-5,
            seed: 0,
            loss_scaling: LossScaling::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig("batch_size, max_epochs and patience must be positive".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::InvalidConfig("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of `1/2 (target - y)^2` over the training samples, each taken
    /// just before the step on its batch.
    pub train_loss: f64,
    /// Normalized-scale validation RMSE; absent when validation is empty.
    pub val_rmse: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_reason: StopReason,
    /// Set when the validation partition was empty: early stopping was off
    /// and the final parameters were kept.
    pub validation_disabled: bool,
}

impl TrainLog {
    pub fn best_val_rmse(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch).and_then(|e| e.val_rmse)
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs.len()
    }
}

/// First epoch index whose validation RMSE is at or below `target`.
pub fn epochs_to_target(log: &TrainLog, target_rmse: f64) -> Option<usize> {
    log.epochs.iter().position(|e| e.val_rmse.is_some_and(|v| v <= target_rmse))
}

/// A model the training loop can fit.
pub trait Trainable: Parameters + Clone {
    /// Summed loss and its gradient over `batch`.
    fn loss_and_grad(&self, batch: &[Sample]) -> Result<(f64, Self::Grad)>;

    fn scale_grad(g: &mut Self::Grad, s: f64);

    /// Prediction on the normalized scale used for scoring.
    fn predict_normalized(&self, idx: Index3) -> Result<f64>;

    fn check_finite(&self) -> Result<()>;
}

impl Trainable for NcpfModel {
    fn loss_and_grad(&self, batch: &[Sample]) -> Result<(f64, Gradients)> {
        autodiff::loss_and_gradients(batch, self)
    }

    fn scale_grad(g: &mut Gradients, s: f64) {
        g.scale(s);
    }

    fn predict_normalized(&self, idx: Index3) -> Result<f64> {
        self.predict(idx)
    }

    fn check_finite(&self) -> Result<()> {
        NcpfModel::check_finite(self)
    }
}

/// Observer for the training loop: supplies wall-clock time and sees each
/// finished epoch (e.g. for periodic checkpoints).
pub trait TrainHooks<M> {
    fn elapsed_ms(&mut self) -> u64 {
        0
    }

    fn on_epoch(&mut self, _record: &EpochRecord, _model: &M) -> Result<()> {
        Ok(())
    }
}

/// No clock, no callbacks.
pub struct NoHooks;

impl<M> TrainHooks<M> for NoHooks {}

pub fn samples(t: &SparseTensor3, p: &Preprocessor) -> Vec<Sample> {
    t.entries().iter().map(|e| Sample { index: e.index, target: p.transform(e.value) }).collect()
}

/// `(triple, normalized prediction)` for every entry of `t`.
pub fn predictions<M: Trainable>(model: &M, t: &SparseTensor3) -> Result<Vec<(Index3, f64)>> {
    t.indices().map(|idx| Ok((idx, model.predict_normalized(idx)?))).collect()
}

/// RMSE between normalized predictions and transformed truth.
pub fn rmse_normalized<M: Trainable>(model: &M, t: &SparseTensor3, p: &Preprocessor) -> Result<f64> {
    rmse_on(model, &samples(t, p))
}

fn rmse_on<M: Trainable>(model: &M, s: &[Sample]) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let mut sq = 0.0;
    for x in s {
        let d = model.predict_normalized(x.index)? - x.target;
        sq += d * d;
    }
    Ok(libm::sqrt(sq / s.len() as f64))
}

pub fn train<M: Trainable>(model: &mut M, split: &Split, p: &Preprocessor, cfg: &TrainConfig) -> Result<TrainLog> {
    train_with_hooks(model, split, p, cfg, &mut NoHooks)
}

pub fn train_with_hooks<M: Trainable, H: TrainHooks<M>>(
    model: &mut M,
    split: &Split,
    p: &Preprocessor,
    cfg: &TrainConfig,
    hooks: &mut H,
) -> Result<TrainLog> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let train_samples = samples(&split.train, p);
    let val_samples = samples(&split.validation, p);
    let validation_disabled = val_samples.is_empty();

    let mut optimizer = Optimizer::new(&cfg.optimizer, model);
    let mut shuffle_rng = rng::stream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size.min(train_samples.len()));

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, M)> = None;
    let mut stale = 0;
    let mut stopped_reason = StopReason::MaxEpochs;

    for epoch in 0..cfg.max_epochs {
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&n| train_samples[n]));
            let (loss, mut g) = model.loss_and_grad(&batch)?;
            loss_sum += loss;
            if cfg.loss_scaling == LossScaling::Mean {
                M::scale_grad(&mut g, 1.0 / batch.len() as f64);
            }
            optimizer.step(model, &g)?;
        }
        model.check_finite()?;

        let val_rmse = if validation_disabled { None } else { Some(rmse_on(model, &val_samples)?) };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_samples.len() as f64,
            val_rmse,
            wall_ms: hooks.elapsed_ms(),
        };
        epochs.push(record);
        hooks.on_epoch(&record, model)?;

        if let Some(v) = val_rmse {
            match &best {
                Some((b, _, _)) if !(v < b - cfg.min_delta) => stale += 1,
                _ => {
                    best = Some((v, epoch, model.clone()));
                    stale = 0;
                }
            }
            if stale >= cfg.patience {
                stopped_reason = StopReason::EarlyStop;
                break;
            }
        }
    }

    let best_epoch = match best {
        Some((_, epoch, snapshot)) => {
            *model = snapshot;
            epoch
        }
        None => epochs.len() - 1,
    };
    Ok(TrainLog { epochs, best_epoch, stopped_reason, validation_disabled })
}
