use serde::{Deserialize, Serialize};

use super::rnn::glorot;
use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Activation, Matrix, SeededRng};

/// Fully connected layer `y = act(x · Wᵀ + b)` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseParams {
    pub fn init(input_dim: usize, output_dim: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        Self { weight: glorot(rng, output_dim, input_dim), bias: vec![0.0; output_dim], activation }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Returns `(pre_activation, output)`.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        if x.cols() != self.input_dim() {
            return Err(shape_err!("dense layer expects {} inputs, got {}", self.input_dim(), x.cols()));
        }
        let mut pre = Matrix::zeros(x.rows(), self.output_dim());
        gemm(1.0, x.view(), self.weight.view().t(), 0.0, pre.as_mut_slice());
        for r in 0..pre.rows() {
            pre.row_mut(r).iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
        }
        let out = pre.map(|v| self.activation.apply(v));
        Ok((pre, out))
    }

    /// `d_pre` is the gradient w.r.t. the pre-activation; returns the input gradient.
    pub(crate) fn backward_pre(&self, x: &Matrix, d_pre: &Matrix, grads: &mut DenseParams) -> Matrix {
        gemm(1.0, d_pre.view().t(), x.view(), 1.0, grads.weight.as_mut_slice());
        for r in 0..d_pre.rows() {
            grads.bias.iter_mut().zip(d_pre.row(r)).for_each(|(g, d)| *g += d);
        }
        let mut dx = Matrix::zeros(x.rows(), x.cols());
        gemm(1.0, d_pre.view(), self.weight.view(), 0.0, dx.as_mut_slice());
        dx
    }
}
