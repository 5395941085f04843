use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::layers::ModelParams;

/// Adaptive-moment (Adam) optimizer with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_betas(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { learning_rate, beta1, beta2, eps, step: 0, first: Vec::new(), second: Vec::new() }
    }

    /// Applies one update to a list of parameter slices given matching gradients.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(shape_err!("{} parameter tensors for {} gradients", params.len(), grads.len()));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(shape_err!("optimizer tracks {} tensors, got {}", self.first.len(), params.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(shape_err!("tensor {i}: {} values, {} gradients", p.len(), g.len()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn second_moments(&self) -> impl Iterator<Item = f64> + '_ {
        self.second.iter().flatten().copied()
    }
}

/// One optimizer update of every trainable tensor of `params`.
pub fn optimizer_step(state: &mut OptimizerState, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
    let g = grads.tensors();
    let gs: Vec<&[f64]> = g.iter().map(|t| t.data).collect();
    let mut p = params.tensors_mut();
    let mut ps: Vec<&mut [f64]> = p.iter_mut().map(|t| &mut *t.data).collect();
    state.step_slices(&mut ps, &gs)
}
