//! Forward and backward semantics of every layer in the recurrent-KAN stack.
//!
//! Sequence activations are stored time-major (`[t][b][d]`) so that each time
//! step is a contiguous `batch × dim` block that can be fed to gemm directly.

pub mod batchnorm;
pub mod dense;
pub mod kan;
pub mod model;
pub mod rnn;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

pub use batchnorm::{BatchNormParams, BatchStats};
pub use dense::DenseParams;
pub use kan::{kan_edge_eval, KanLayerParams, SplineGrid};
pub use model::{CellKind, ModelParams, ModelSpec};
pub use rnn::{gru_step, lstm_step, GruParams, LstmParams, RnnParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Batch of padded sequences with an explicit validity mask.
///
/// Features are stored batch-major (`[b][t][d]`). The mask of every sequence
/// is `true` on a non-empty prefix and `false` afterwards; padded feature
/// entries are `0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    batch: usize,
    time: usize,
    dim: usize,
    features: Vec<f64>,
    mask: Vec<bool>,
    lengths: Vec<usize>,
}

impl MaskedBatch {
    pub fn new(batch: usize, time: usize, dim: usize, features: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if features.len() != batch * time * dim {
            return Err(shape_err!("{} feature values for {batch}x{time}x{dim}", features.len()));
        }
        if mask.len() != batch * time {
            return Err(shape_err!("{} mask values for {batch}x{time}", mask.len()));
        }
        let mut lengths = Vec::with_capacity(batch);
        for b in 0..batch {
            let m = &mask[b * time..(b + 1) * time];
            let len = m.iter().take_while(|&&v| v).count();
            if m[len..].iter().any(|&v| v) {
                return Err(invalid!("mask of sequence {b} is not a prefix"));
            }
            let pad = &features[(b * time + len) * dim..(b + 1) * time * dim];
            if pad.iter().any(|&v| v != 0.0) {
                return Err(invalid!("padded steps of sequence {b} are not zero"));
            }
            lengths.push(len);
        }
        Ok(Self { batch, time, dim, features, mask, lengths })
    }

    /// Builds a batch from per-sequence rows (`time_b × dim`), right-padding to
    /// the longest sequence.
    pub fn from_sequences(seqs: &[Vec<Vec<f64>>], dim: usize) -> Result<Self> {
        let time = seqs.iter().map(Vec::len).max().unwrap_or(0);
        Self::from_sequences_padded(seqs, dim, time)
    }

    pub fn from_sequences_padded(seqs: &[Vec<Vec<f64>>], dim: usize, time: usize) -> Result<Self> {
        let batch = seqs.len();
        let mut features = vec![0.0; batch * time * dim];
        let mut mask = vec![false; batch * time];
        for (b, s) in seqs.iter().enumerate() {
            if s.len() > time {
                return Err(shape_err!("sequence {b} has {} steps, target is {time}", s.len()));
            }
            for (t, row) in s.iter().enumerate() {
                if row.len() != dim {
                    return Err(shape_err!("sequence {b} step {t} has {} features, expected {dim}", row.len()));
                }
                features[(b * time + t) * dim..(b * time + t + 1) * dim].copy_from_slice(row);
                mask[b * time + t] = true;
            }
        }
        Self::new(batch, time, dim, features, mask)
    }

    /// Keras-style masking: a step is padding when every feature equals `mask_value`.
    pub fn from_mask_value(batch: usize, time: usize, dim: usize, features: Vec<f64>, mask_value: f64) -> Result<Self> {
        if features.len() != batch * time * dim {
            return Err(shape_err!("{} feature values for {batch}x{time}x{dim}", features.len()));
        }
        let mask = features.chunks(dim.max(1)).map(|row| row.iter().any(|&v| v != mask_value)).collect();
        Self::new(batch, time, dim, features, mask)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of valid steps in each sequence.
    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn step(&self, b: usize, t: usize) -> &[f64] {
        let o = (b * self.time + t) * self.dim;
        &self.features[o..o + self.dim]
    }

    /// Same sequences with `extra` additional padded steps.
    pub fn with_extra_padding(&self, extra: usize) -> Self {
        let time = self.time + extra;
        let mut features = vec![0.0; self.batch * time * self.dim];
        let mut mask = vec![false; self.batch * time];
        for b in 0..self.batch {
            let src = &self.features[b * self.time * self.dim..(b + 1) * self.time * self.dim];
            features[b * time * self.dim..b * time * self.dim + src.len()].copy_from_slice(src);
            mask[b * time..b * time + self.time].copy_from_slice(&self.mask[b * self.time..(b + 1) * self.time]);
        }
        Self { batch: self.batch, time, dim: self.dim, features, mask, lengths: self.lengths.clone() }
    }

    /// Sub-batch with the given sequence indices, in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let per = self.time * self.dim;
        let mut features = Vec::with_capacity(idx.len() * per);
        let mut mask = Vec::with_capacity(idx.len() * self.time);
        let mut lengths = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(&self.features[i * per..(i + 1) * per]);
            mask.extend_from_slice(&self.mask[i * self.time..(i + 1) * self.time]);
            lengths.push(self.lengths[i]);
        }
        Self { batch: idx.len(), time: self.time, dim: self.dim, features, mask, lengths }
    }

    pub(crate) fn to_seq(&self) -> Seq {
        let mut seq = Seq::zeros(self.time, self.batch, self.dim);
        for b in 0..self.batch {
            for t in 0..self.time {
                seq.row_mut(t, b).copy_from_slice(self.step(b, t));
            }
        }
        seq
    }
}

/// Time-major sequence tensor, `[t][b][d]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Seq {
    pub time: usize,
    pub batch: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Seq {
    pub fn zeros(time: usize, batch: usize, dim: usize) -> Self {
        Self { time, batch, dim, data: vec![0.0; time * batch * dim] }
    }

    pub fn step(&self, t: usize) -> &[f64] {
        let n = self.batch * self.dim;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn step_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.batch * self.dim;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn row_mut(&mut self, t: usize, b: usize) -> &mut [f64] {
        let o = (t * self.batch + b) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    pub fn row(&self, t: usize, b: usize) -> &[f64] {
        let o = (t * self.batch + b) * self.dim;
        &self.data[o..o + self.dim]
    }
}

/// Sequence lengths with the non-empty check every recurrent layer needs.
pub(crate) fn checked_lengths(lengths: &[usize]) -> Result<()> {
    if let Some(b) = lengths.iter().position(|&l| l == 0) {
        return Err(invalid!("sequence {b} has no unmasked steps"));
    }
    Ok(())
}
