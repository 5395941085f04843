//! Central-difference verification of the analytic gradients.

use serde::{Deserialize, Serialize};

use super::loss::bce_loss;
use crate::error::Result;
use crate::layers::model::ModelKind;
use crate::layers::{DenseParams, MaskedBatch, ModelParams, ModelSpec, Mode};
use crate::tensor::{Activation, Matrix, SeededRng};

pub const FD_STEP: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Dimensions of the miniature model used for checking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckScale {
    pub batch: usize,
    pub time: usize,
    pub input_dim: usize,
    pub rnn1_units: usize,
    pub rnn2_units: usize,
    pub kan_num_functions: usize,
    pub dense_units: usize,
    /// Spline grid range; matched to the bounded recurrent outputs so every
    /// basis function sees data.
    pub kan_grid: (f64, f64),
}

impl Default for GradCheckScale {
    fn default() -> Self {
        Self {
            batch: 2,
            time: 3,
            input_dim: 4,
            rnn1_units: 3,
            rnn2_units: 2,
            kan_num_functions: 5,
            dense_units: 4,
            kan_grid: (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub model: String,
    pub seed: u64,
    pub parameters: usize,
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: String,
}

/// Checks every trainable parameter of a miniature `kind` model. The last
/// sequence of the batch is one step shorter than the rest so that masking
/// is exercised; dropout uses the same mask for every evaluation. All labels
/// are positive so per-sample contributions do not cancel into gradients
/// small enough for finite-difference roundoff to dominate.
pub fn gradient_check(kind: ModelKind, scale: GradCheckScale, seed: u64) -> Result<GradCheckReport> {
    let mut rng = SeededRng::new(seed);
    let spec = ModelSpec {
        rnn1_units: scale.rnn1_units,
        rnn2_units: scale.rnn2_units,
        kan_num_functions: scale.kan_num_functions,
        dense_units: scale.dense_units,
        kan_grid: scale.kan_grid,
        ..ModelSpec::for_kind(kind, scale.input_dim)
    };
    let mut params = ModelParams::init(&spec, &mut rng)?;
    // zero-initialized biases and coefficients would leave several gradients trivially small
    let flat: Vec<f64> = params.flatten().iter().map(|v| v + rng.normal(0.0, 0.3)).collect();
    params.set_flat(&flat)?;

    let (b, t, d) = (scale.batch, scale.time, scale.input_dim);
    let mut features = vec![0.0; b * t * d];
    let mut mask = vec![true; b * t];
    for s in 0..b {
        let len = if s + 1 == b && t > 1 { t - 1 } else { t };
        for step in 0..t {
            if step < len {
                for k in 0..d {
                    features[(s * t + step) * d + k] = rng.normal(0.0, 1.0);
                }
            } else {
                mask[s * t + step] = false;
            }
        }
    }
    let batch = MaskedBatch::new(b, t, d, features, mask)?;
    let labels = vec![1.0; b];
    let dropout_seed = rng.next_u64();

    let loss_at = |p: &ModelParams| -> Result<f64> {
        let probs = p.forward(&batch, Mode::Train, &mut SeededRng::new(dropout_seed))?;
        Ok(bce_loss(&probs, &labels)?.mean)
    };
    let cache = params.forward_cached(&batch, Mode::Train, &mut SeededRng::new(dropout_seed))?;
    let analytic = params.backward(&cache, &labels)?.flatten();

    let names: Vec<(String, usize)> = params.tensors().iter().map(|t| (t.name.clone(), t.data.len())).collect();
    let mut probe = params.clone();
    let mut worst = (0.0f64, 0usize);
    for i in 0..flat.len() {
        let mut x = flat.clone();
        x[i] = flat[i] + FD_STEP;
        probe.set_flat(&x)?;
        let up = loss_at(&probe)?;
        x[i] = flat[i] - FD_STEP;
        probe.set_flat(&x)?;
        let down = loss_at(&probe)?;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        model: kind.name().to_string(),
        seed,
        parameters: flat.len(),
        max_rel_error: worst.0,
        worst: locate(&names, worst.1),
    })
}

fn locate(names: &[(String, usize)], mut index: usize) -> String {
    for (name, len) in names {
        if index < *len {
            return format!("{name}[{index}]");
        }
        index -= len;
    }
    String::from("?")
}

/// Checks a lone dense layer with sigmoid output under cross-entropy.
pub fn gradient_check_head(input_dim: usize, batch: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = SeededRng::new(seed);
    let mut layer = DenseParams::init(input_dim, 1, Activation::Sigmoid, &mut rng);
    layer.bias.iter_mut().for_each(|v| *v = rng.normal(0.0, 0.5));
    let x = Matrix::from_vec(batch, input_dim, rng.normals(batch * input_dim, 0.0, 1.0))?;
    let labels: Vec<f64> = (0..batch).map(|i| (i % 2) as f64).collect();
    let loss_at = |l: &DenseParams| -> Result<f64> {
        let (_, out) = l.forward(&x)?;
        Ok(bce_loss(out.as_slice(), &labels)?.mean)
    };
    let (_, out) = layer.forward(&x)?;
    let inv = 1.0 / batch as f64;
    let d_pre = Matrix::from_vec(batch, 1, out.as_slice().iter().zip(&labels).map(|(p, y)| (p - y) * inv).collect())?;
    let mut grads = layer.zeros_like();
    layer.backward_pre(&x, &d_pre, &mut grads);
    let analytic: Vec<f64> = grads.weight.as_slice().iter().chain(&grads.bias).copied().collect();

    let n_w = input_dim;
    let mut worst = (0.0f64, 0usize);
    for i in 0..analytic.len() {
        let mut probe = layer.clone();
        let base = *head_slot(&mut probe, i);
        *head_slot(&mut probe, i) = base + FD_STEP;
        let up = loss_at(&probe)?;
        *head_slot(&mut probe, i) = base - FD_STEP;
        let down = loss_at(&probe)?;
        let err = relative_error(analytic[i], (up - down) / (2.0 * FD_STEP));
        if err > worst.0 {
            worst = (err, i);
        }
    }
    let names = [("output.weight".to_string(), n_w), ("output.bias".to_string(), 1)];
    Ok(GradCheckReport {
        model: "dense+sigmoid".into(),
        seed,
        parameters: analytic.len(),
        max_rel_error: worst.0,
        worst: locate(&names, worst.1),
    })
}

fn head_slot(l: &mut DenseParams, i: usize) -> &mut f64 {
    let n_w = l.weight.as_slice().len();
    if i < n_w {
        &mut l.weight.as_mut_slice()[i]
    } else {
        &mut l.bias[i - n_w]
    }
}
