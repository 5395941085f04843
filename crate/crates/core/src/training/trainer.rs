use std::path::Path;
use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::bce_loss;
use super::optim::{optimizer_step, OptimizerState};
use crate::error::{invalid, shape_err, Result};
use crate::layers::{MaskedBatch, ModelParams, ModelSpec, Mode};
use crate::tensor::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Separate seed for weight initialization; defaults to `seed`.
    pub init_seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            early_stop_patience: 5,
            validation_fraction: 0.1,
            seed: 0,
            init_seed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid!("validation_fraction must lie in [0, 1)"));
        }
        // also rejects NaN
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.learning_rate > 0.0) {
            return Err(invalid!("learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when training without a validation split.
    pub val_loss: Option<f64>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest monitored loss.
    pub params: ModelParams,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

// rng stream ids
const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

/// Mini-batch training with Adam and early stopping on validation loss.
/// A trailing batch of a single sample is merged into the previous one.
pub fn train(spec: &ModelSpec, data: &MaskedBatch, labels: &[f64], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if labels.len() != data.batch() {
        return Err(shape_err!("{} labels for {} samples", labels.len(), data.batch()));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(invalid!("labels must be 0 or 1"));
    }
    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == labels.len() {
        return Err(invalid!("training data must contain both classes"));
    }
    let root = SeededRng::new(cfg.seed);
    let mut params = ModelParams::init(spec, &mut SeededRng::new(cfg.init_seed.unwrap_or(cfg.seed)))?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, trace: Vec::new(), best_epoch: 0, stopped_early: false });
    }

    let mut order: Vec<usize> = (0..data.batch()).collect();
    root.derive(SPLIT_STREAM).shuffle(&mut order);
    let n_val = ((data.batch() as f64) * cfg.validation_fraction).floor() as usize;
    if data.batch() - n_val < 2 {
        return Err(invalid!("too few samples to train: {}", data.batch()));
    }
    let (val_idx, train_idx) = order.split_at(n_val);
    let val = (!val_idx.is_empty()).then(|| (data.select(val_idx), val_idx.iter().map(|&i| labels[i]).collect::<Vec<_>>()));
    let mut train_idx = train_idx.to_vec();

    let mut opt = OptimizerState::with_betas(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut shuffle_rng = root.derive(SHUFFLE_STREAM);
    let mut dropout_rng = root.derive(DROPOUT_STREAM);
    let start = Instant::now();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut train_idx);
        let mut total = 0.0;
        for chunk in batch_ranges(train_idx.len(), cfg.batch_size) {
            let idx = &train_idx[chunk];
            let batch = data.select(idx);
            let y: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
            let cache = params.forward_cached(&batch, Mode::Train, &mut dropout_rng)?;
            total += bce_loss(&cache.probs, &y)?.mean * idx.len() as f64;
            let grads = params.backward(&cache, &y)?;
            optimizer_step(&mut opt, &mut params, &grads)?;
            if let Some(stats) = cache.batch_stats() {
                params.bn.update_running(stats);
            }
        }
        let train_loss = total / train_idx.len() as f64;
        let val_loss = match &val {
            Some((vb, vy)) => Some(bce_loss(&predict(&params, vb)?, vy)?.mean),
            None => None,
        };
        trace.push(EpochRecord { epoch, train_loss, val_loss, elapsed_ms: start.elapsed().as_millis() as u64 });
        let monitored = val_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(invalid!("loss diverged at epoch {epoch}"));
        }
        if monitored < best.0 {
            best = (monitored, epoch, params.clone());
        } else if epoch - best.1 >= cfg.early_stop_patience {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    log::debug!("training stopped after {} epochs, best epoch {}", trace.len(), best.1);
    Ok(TrainOutcome { params: best.2, trace, best_epoch: best.1, stopped_early })
}

fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<_> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}

const PREDICT_CHUNK: usize = 512;

/// Inference-mode default probabilities, evaluated in chunks.
pub fn predict(params: &ModelParams, data: &MaskedBatch) -> Result<Vec<f64>> {
    let ranges: Vec<_> = (0..data.batch()).step_by(PREDICT_CHUNK).map(|s| s..(s + PREDICT_CHUNK).min(data.batch())).collect();
    let run = |r: &std::ops::Range<usize>| -> Result<Vec<f64>> {
        let idx: Vec<usize> = r.clone().collect();
        // the rng is unused in inference mode
        params.forward(&data.select(&idx), Mode::Infer, &mut SeededRng::new(0))
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<Vec<f64>>> = ranges.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<Vec<f64>>> = ranges.iter().map(run).collect();
    let mut out = Vec::with_capacity(data.batch());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Writes `epoch,train_loss,val_loss,elapsed_ms`.
pub fn write_trace_csv(path: &Path, trace: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "elapsed_ms"])?;
    for r in trace {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            r.elapsed_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
