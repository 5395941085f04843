//! Batch normalization over the feature axis of a masked sequence.
//!
//! `y = γ · (h − μ) / (σ + ε) + β`, with μ and σ (biased) pooled over every
//! unmasked `(batch, time)` position of a feature. Masked positions produce
//! `0.0` and receive no gradient.

use serde::{Deserialize, Serialize};

use super::{MaskedBatch, Mode, Seq};
use crate::error::{invalid, shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Per-feature statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    stats: BatchStats,
    /// centred input `h − μ`, zero at masked positions
    centred: Seq,
}

impl BnCache {
    pub fn stats(&self) -> &BatchStats {
        &self.stats
    }
}

impl BatchNormParams {
    pub fn new(dim: usize, epsilon: f64, momentum: f64) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            epsilon,
            momentum,
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.dim();
        Self {
            gamma: vec![0.0; d],
            beta: vec![0.0; d],
            epsilon: self.epsilon,
            momentum: self.momentum,
            running_mean: vec![0.0; d],
            running_var: vec![0.0; d],
        }
    }

    fn check(&self, x: &Seq) -> Result<()> {
        if x.dim != self.dim() {
            return Err(shape_err!("batch norm over {} features, got {}", self.dim(), x.dim));
        }
        Ok(())
    }

    pub(crate) fn forward_train(&self, x: &Seq, lengths: &[usize]) -> Result<(Seq, BnCache)> {
        self.check(x)?;
        let d = x.dim;
        let count: usize = lengths.iter().map(|&l| l.min(x.time)).sum();
        if count < 2 {
            return Err(invalid!("batch norm training needs at least 2 unmasked positions, got {count}"));
        }
        let valid = |t: usize, b: usize| t < lengths[b];
        let mut mean = vec![0.0; d];
        for t in 0..x.time {
            for b in 0..x.batch {
                if valid(t, b) {
                    mean.iter_mut().zip(x.row(t, b)).for_each(|(m, v)| *m += v);
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut centred = Seq::zeros(x.time, x.batch, d);
        let mut var = vec![0.0; d];
        for t in 0..x.time {
            for b in 0..x.batch {
                if !valid(t, b) {
                    continue;
                }
                let row = centred.row_mut(t, b);
                for ((c, v), m) in row.iter_mut().zip(x.row(t, b)).zip(&mean) {
                    *c = v - m;
                }
                var.iter_mut().zip(row.iter()).for_each(|(s, c)| *s += c * c);
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / (v.sqrt() + self.epsilon)).collect();
        let mut out = Seq::zeros(x.time, x.batch, d);
        for t in 0..x.time {
            for b in 0..x.batch {
                if !valid(t, b) {
                    continue;
                }
                let c = centred.row(t, b);
                for (j, o) in out.row_mut(t, b).iter_mut().enumerate() {
                    *o = self.gamma[j] * c[j] * scale[j] + self.beta[j];
                }
            }
        }
        Ok((out, BnCache { stats: BatchStats { mean, var, count }, centred }))
    }

    pub(crate) fn forward_infer(&self, x: &Seq, lengths: &[usize]) -> Result<Seq> {
        self.check(x)?;
        let scale: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v.sqrt() + self.epsilon)).collect();
        let mut out = Seq::zeros(x.time, x.batch, x.dim);
        for t in 0..x.time {
            for b in 0..x.batch {
                if t >= lengths[b] {
                    continue;
                }
                let xr = x.row(t, b);
                for (j, o) in out.row_mut(t, b).iter_mut().enumerate() {
                    *o = self.gamma[j] * (xr[j] - self.running_mean[j]) * scale[j] + self.beta[j];
                }
            }
        }
        Ok(out)
    }

    /// Exponential moving average: `running ← (1 − momentum)·running + momentum·batch`.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for j in 0..self.dim() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * stats.mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * stats.var[j];
        }
    }

    pub(crate) fn backward(&self, cache: &BnCache, dy: &Seq, lengths: &[usize], grads: &mut BatchNormParams) -> Seq {
        let d = self.dim();
        let n = cache.stats.count as f64;
        let sigma: Vec<f64> = cache.stats.var.iter().map(|v| v.sqrt()).collect();
        let s: Vec<f64> = sigma.iter().map(|v| v + self.epsilon).collect();
        let mut sum_dh = vec![0.0; d];
        let mut sum_dh_u = vec![0.0; d];
        for t in 0..dy.time {
            for b in 0..dy.batch {
                if t >= lengths[b] {
                    continue;
                }
                let (g, u) = (dy.row(t, b), cache.centred.row(t, b));
                for j in 0..d {
                    grads.beta[j] += g[j];
                    grads.gamma[j] += g[j] * u[j] / s[j];
                    let dh = g[j] * self.gamma[j];
                    sum_dh[j] += dh;
                    sum_dh_u[j] += dh * u[j];
                }
            }
        }
        let mut dx = Seq::zeros(dy.time, dy.batch, d);
        for t in 0..dy.time {
            for b in 0..dy.batch {
                if t >= lengths[b] {
                    continue;
                }
                let u = cache.centred.row(t, b).to_vec();
                let g = dy.row(t, b).to_vec();
                for (j, o) in dx.row_mut(t, b).iter_mut().enumerate() {
                    let dh = g[j] * self.gamma[j];
                    let var_term =
                        if sigma[j] > 0.0 { u[j] / (sigma[j] * s[j]) * (sum_dh_u[j] / n) } else { 0.0 };
                    *o = (dh - sum_dh[j] / n - var_term) / s[j];
                }
            }
        }
        dx
    }
}

/// Normalizes a masked batch; in train mode the running statistics are updated.
/// Returns features in the batch's `[b][t][d]` layout, zero at masked positions.
pub fn batch_norm_forward(p: &mut BatchNormParams, input: &MaskedBatch, mode: Mode) -> Result<Vec<f64>> {
    let x = input.to_seq();
    let out = match mode {
        Mode::Train => {
            let (out, cache) = p.forward_train(&x, input.lengths())?;
            p.update_running(cache.stats());
            out
        }
        Mode::Infer => p.forward_infer(&x, input.lengths())?,
    };
    let mut flat = vec![0.0; input.batch() * input.time() * input.dim()];
    for b in 0..input.batch() {
        for t in 0..input.time() {
            let o = (b * input.time() + t) * input.dim();
            flat[o..o + input.dim()].copy_from_slice(out.row(t, b));
        }
    }
    Ok(flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;

    #[test]
    fn two_point_normalization() {
        let mut p = BatchNormParams::new(2, 0.0, 0.1);
        let batch = MaskedBatch::from_sequences(&[vec![vec![1.0, 10.0], vec![3.0, 20.0]]], 2).unwrap();
        let out = batch_norm_forward(&mut p, &batch, Mode::Train).unwrap();
        assert_eq!(out, vec![-1.0, -1.0, 1.0, 1.0]);
        assert!((p.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((p.running_var[1] - (0.9 + 0.1 * 25.0)).abs() < 1e-12);
    }

    #[test]
    fn inverse_construction_is_identity_in_infer_mode() {
        let mut p = BatchNormParams::new(2, 0.0, 0.1);
        p.running_mean = vec![3.0, -1.0];
        p.running_var = vec![4.0, 0.25];
        p.gamma = vec![2.0, 0.5];
        p.beta = p.running_mean.clone();
        let batch = MaskedBatch::from_sequences(&[vec![vec![0.7, 9.0], vec![-4.0, 2.0]]], 2).unwrap();
        let out = batch_norm_forward(&mut p, &batch, Mode::Infer).unwrap();
        for (o, x) in out.iter().zip(batch.features()) {
            assert!((o - x).abs() < 1e-12);
        }
    }

    #[test]
    fn output_statistics_are_standardized() {
        let mut rng = SeededRng::new(4);
        let seqs: Vec<Vec<Vec<f64>>> = (0..8)
            .map(|i| (0..(3 + i % 3)).map(|_| vec![rng.normal(5.0, 3.0), rng.normal(-2.0, 0.1)]).collect())
            .collect();
        let batch = MaskedBatch::from_sequences(&seqs, 2).unwrap();
        let eps = 1e-5;
        let mut p = BatchNormParams::new(2, eps, 0.1);
        let out = batch_norm_forward(&mut p, &batch, Mode::Train).unwrap();
        for j in 0..2 {
            let vals: Vec<f64> = (0..batch.batch())
                .flat_map(|b| (0..batch.lengths()[b]).map(move |t| (b, t)))
                .map(|(b, t)| out[(b * batch.time() + t) * 2 + j])
                .collect();
            let raw: Vec<f64> = (0..batch.batch())
                .flat_map(|b| (0..batch.lengths()[b]).map(move |t| (b, t)))
                .map(|(b, t)| batch.step(b, t)[j])
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let rm = raw.iter().sum::<f64>() / n;
            let rs = (raw.iter().map(|v| (v - rm).powi(2)).sum::<f64>() / n).sqrt();
            // the ε in the denominator shrinks the variance by (σ / (σ + ε))²
            let expected = (rs / (rs + eps)).powi(2);
            assert!(mean.abs() < 1e-9);
            assert!((var - expected).abs() < 1e-6, "{var} vs {expected}");
            assert!((var - 1.0).abs() < 2.0 * eps / rs + 1e-6);
        }
    }

    #[test]
    fn masked_positions_ignored_and_zeroed() {
        let mut p = BatchNormParams::new(1, 0.0, 0.1);
        let batch = MaskedBatch::from_sequences(&[vec![vec![1.0], vec![3.0]], vec![vec![2.0]]], 1).unwrap();
        let out = batch_norm_forward(&mut p, &batch, Mode::Train).unwrap();
        assert_eq!(out[3], 0.0);
        assert!((out[2] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_positions_is_an_error() {
        let mut p = BatchNormParams::new(1, 1e-5, 0.1);
        let batch = MaskedBatch::from_sequences(&[vec![vec![1.0]]], 1).unwrap();
        assert!(batch_norm_forward(&mut p, &batch, Mode::Train).is_err());
    }
}
