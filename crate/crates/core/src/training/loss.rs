use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

/// Probabilities are clipped to `[PROB_CLIP, 1 − PROB_CLIP]` before taking logs.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    /// Mean binary cross-entropy.
    pub mean: f64,
    pub sample_count: usize,
}

pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<LossValue> {
    if probs.len() != labels.len() {
        return Err(shape_err!("{} probabilities for {} labels", probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(invalid!("binary cross-entropy of an empty batch"));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(LossValue { mean: total / probs.len() as f64, sample_count: probs.len() })
}
