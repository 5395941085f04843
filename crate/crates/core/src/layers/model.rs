//! The full recurrent-KAN classifier:
//!
//! ```text
//! mask → rnn1 (sequences) → batch norm → rnn2 (final state) → KAN layer(s)
//!      → dense(relu) → dropout → dense(1, sigmoid)
//! ```
//!
//! Plain recurrent baselines drop the KAN stage and feed the final state of
//! `rnn2` straight into the dense head.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::batchnorm::BnCache;
use super::kan::KanCache;
use super::rnn::{RnnCache, GRU_GATES, LSTM_GATES};
use super::{BatchNormParams, DenseParams, GruParams, KanLayerParams, LstmParams, MaskedBatch, Mode, RnnParams, Seq, SplineGrid};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{sigmoid, Activation, Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "LSTM")]
    Lstm,
}

/// The four architectures compared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "GRU-KAN")]
    GruKan,
    #[serde(rename = "LSTM-KAN")]
    LstmKan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Gru, ModelKind::Lstm, ModelKind::GruKan, ModelKind::LstmKan];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gru => "GRU",
            ModelKind::Lstm => "LSTM",
            ModelKind::GruKan => "GRU-KAN",
            ModelKind::LstmKan => "LSTM-KAN",
        }
    }

    pub fn cell(self) -> CellKind {
        match self {
            ModelKind::Gru | ModelKind::GruKan => CellKind::Gru,
            ModelKind::Lstm | ModelKind::LstmKan => CellKind::Lstm,
        }
    }

    pub fn uses_kan(self) -> bool {
        matches!(self, ModelKind::GruKan | ModelKind::LstmKan)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "GRU" => Ok(ModelKind::Gru),
            "LSTM" => Ok(ModelKind::Lstm),
            "GRU-KAN" | "GRUKAN" => Ok(ModelKind::GruKan),
            "LSTM-KAN" | "LSTMKAN" => Ok(ModelKind::LstmKan),
            other => Err(invalid!("unknown model '{other}'")),
        }
    }
}

/// Architecture description. Defaults follow the reference GRU-KAN / LSTM-KAN stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub cell_kind: CellKind,
    pub input_dim: usize,
    pub rnn1_units: usize,
    pub rnn2_units: usize,
    /// `false` gives the plain recurrent baseline.
    pub use_kan: bool,
    /// Widths of additional KAN layers stacked before the output KAN layer.
    pub kan_hidden: Vec<usize>,
    pub kan_output_dim: usize,
    pub kan_num_functions: usize,
    pub kan_spline_order: usize,
    pub kan_grid: (f64, f64),
    pub kan_base_std: f64,
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            cell_kind: CellKind::Gru,
            input_dim: 1,
            rnn1_units: 128,
            rnn2_units: 64,
            use_kan: true,
            kan_hidden: Vec::new(),
            kan_output_dim: 1,
            kan_num_functions: 10,
            kan_spline_order: 3,
            kan_grid: (-3.0, 3.0),
            kan_base_std: 0.1,
            dense_units: 64,
            dropout_rate: 0.3,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelSpec {
    pub fn for_kind(kind: ModelKind, input_dim: usize) -> Self {
        Self { cell_kind: kind.cell(), use_kan: kind.uses_kan(), input_dim, ..Self::default() }
    }

    pub fn kind(&self) -> ModelKind {
        match (self.cell_kind, self.use_kan) {
            (CellKind::Gru, false) => ModelKind::Gru,
            (CellKind::Gru, true) => ModelKind::GruKan,
            (CellKind::Lstm, false) => ModelKind::Lstm,
            (CellKind::Lstm, true) => ModelKind::LstmKan,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let units = [self.input_dim, self.rnn1_units, self.rnn2_units, self.kan_output_dim, self.dense_units];
        if units.iter().chain(&self.kan_hidden).any(|&u| u == 0) {
            return Err(invalid!("all layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.bn_epsilon < 0.0 || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(invalid!("batch norm epsilon must be >= 0 and momentum in (0, 1)"));
        }
        if self.use_kan {
            self.grid()?;
        }
        Ok(())
    }

    fn grid(&self) -> Result<SplineGrid> {
        SplineGrid::new(self.kan_grid.0, self.kan_grid.1, self.kan_spline_order, self.kan_num_functions)
    }

    fn kan_widths(&self) -> Vec<usize> {
        let mut w = vec![self.rnn2_units];
        w.extend(&self.kan_hidden);
        w.push(self.kan_output_dim);
        w
    }

    fn head_input(&self) -> usize {
        if self.use_kan {
            self.kan_output_dim
        } else {
            self.rnn2_units
        }
    }
}

/// Every tensor of a model. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub rnn1: RnnParams,
    pub bn: BatchNormParams,
    pub rnn2: RnnParams,
    pub kan: Vec<KanLayerParams>,
    pub dense: DenseParams,
    pub output: DenseParams,
}

/// Named view of one tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

pub struct TensorViewMut<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a mut [f64],
}

/// Activations retained for the backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    mode: Mode,
    lengths: Vec<usize>,
    rnn1: RnnCache,
    bn: Option<BnCache>,
    rnn2: RnnCache,
    kan: Vec<(Matrix, KanCache)>,
    dense_in: Matrix,
    dense_pre: Matrix,
    dropout: Option<Vec<f64>>,
    head_in: Matrix,
    pub probs: Vec<f64>,
}

impl ForwardCache {
    /// Batch statistics of the normalization layer (train mode only).
    pub fn batch_stats(&self) -> Option<&super::BatchStats> {
        self.bn.as_ref().map(|c| c.stats())
    }
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases and spline coefficients, `N(0, base_std²)` KAN base weights.
    pub fn init(spec: &ModelSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let rnn = |i: usize, h: usize, rng: &mut SeededRng| match spec.cell_kind {
            CellKind::Lstm => RnnParams::Lstm(LstmParams::init(i, h, rng)),
            CellKind::Gru => RnnParams::Gru(GruParams::init(i, h, rng)),
        };
        let rnn1 = rnn(spec.input_dim, spec.rnn1_units, rng);
        let rnn2 = rnn(spec.rnn1_units, spec.rnn2_units, rng);
        let mut kan = Vec::new();
        if spec.use_kan {
            let grid = spec.grid()?;
            for w in spec.kan_widths().windows(2) {
                kan.push(KanLayerParams::init(w[0], w[1], grid.clone(), spec.kan_base_std, rng));
            }
        }
        let dense = DenseParams::init(spec.head_input(), spec.dense_units, Activation::Relu, rng);
        let output = DenseParams::init(spec.dense_units, 1, Activation::Sigmoid, rng);
        Ok(Self {
            spec: spec.clone(),
            rnn1,
            bn: BatchNormParams::new(spec.rnn1_units, spec.bn_epsilon, spec.bn_momentum),
            rnn2,
            kan,
            dense,
            output,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            rnn1: self.rnn1.zeros_like(),
            bn: self.bn.zeros_like(),
            rnn2: self.rnn2.zeros_like(),
            kan: self.kan.iter().map(KanLayerParams::zeros_like).collect(),
            dense: self.dense.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let raw = collect_tensors(self);
        raw.into_iter().map(|(name, shape, data)| TensorView { name, shape, data }).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let raw: Vec<(String, (usize, usize), &mut [f64])> = collect_tensors_mut(self);
        raw.into_iter().map(|(name, shape, data)| TensorViewMut { name, shape, data }).collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// All trainable values concatenated in `tensors()` order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_trainable();
        if flat.len() != n {
            return Err(shape_err!("{} values for {n} parameters", flat.len()));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Forward pass returning default probabilities. Train mode uses batch
    /// statistics and samples a dropout mask from `rng`; it does not touch
    /// the running statistics.
    pub fn forward(&self, batch: &MaskedBatch, mode: Mode, rng: &mut SeededRng) -> Result<Vec<f64>> {
        Ok(self.forward_cached(batch, mode, rng)?.probs)
    }

    pub fn forward_cached(&self, batch: &MaskedBatch, mode: Mode, rng: &mut SeededRng) -> Result<ForwardCache> {
        if batch.dim() != self.spec.input_dim {
            return Err(shape_err!("model expects {} features, batch has {}", self.spec.input_dim, batch.dim()));
        }
        let lengths = batch.lengths().to_vec();
        let x = batch.to_seq();
        let (h1, rnn1_cache) = self.rnn1.forward(&x, &lengths)?;
        let (n1, bn_cache) = match mode {
            Mode::Train => {
                let (o, c) = self.bn.forward_train(&h1, &lengths)?;
                (o, Some(c))
            }
            Mode::Infer => (self.bn.forward_infer(&h1, &lengths)?, None),
        };
        let (h2, rnn2_cache) = self.rnn2.forward(&n1, &lengths)?;
        let bl = batch.batch();
        let mut cur = last_step(&h2, bl);
        let mut kan = Vec::with_capacity(self.kan.len());
        for layer in &self.kan {
            let (y, c) = layer.forward_cached(&cur)?;
            kan.push((cur, c));
            cur = y;
        }
        let dense_in = cur;
        let (dense_pre, dense_out) = self.dense.forward(&dense_in)?;
        let (head_in, dropout) = match mode {
            Mode::Train if self.spec.dropout_rate > 0.0 => {
                let keep = 1.0 - self.spec.dropout_rate;
                let mask: Vec<f64> =
                    (0..dense_out.as_slice().len()).map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 }).collect();
                let mut h = dense_out;
                h.as_mut_slice().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                (h, Some(mask))
            }
            _ => (dense_out, None),
        };
        let (logits, _) = self.output.forward(&head_in)?;
        let probs = logits.as_slice().iter().map(|&z| sigmoid(z)).collect();
        Ok(ForwardCache {
            mode,
            lengths,
            rnn1: rnn1_cache,
            bn: bn_cache,
            rnn2: rnn2_cache,
            kan,
            dense_in,
            dense_pre,
            dropout,
            head_in,
            probs,
        })
    }

    /// Gradient of the mean binary cross-entropy w.r.t. every trainable tensor.
    /// The cache must come from a train-mode forward pass.
    pub fn backward(&self, cache: &ForwardCache, labels: &[f64]) -> Result<ModelParams> {
        if cache.mode != Mode::Train {
            return Err(invalid!("backward requires a train-mode forward pass"));
        }
        let bl = cache.probs.len();
        if labels.len() != bl {
            return Err(shape_err!("{} labels for batch {bl}", labels.len()));
        }
        let mut g = self.zeros_like();
        let inv = 1.0 / bl as f64;
        let d_logit = Matrix::from_vec(bl, 1, cache.probs.iter().zip(labels).map(|(p, y)| (p - y) * inv).collect())?;
        let mut d = self.output.backward_pre(&cache.head_in, &d_logit, &mut g.output);
        if let Some(mask) = &cache.dropout {
            d.as_mut_slice().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        let act = self.dense.activation;
        d.as_mut_slice().iter_mut().zip(cache.dense_pre.as_slice()).for_each(|(v, &z)| *v *= act.derivative(z));
        let mut d = self.dense.backward_pre(&cache.dense_in, &d, &mut g.dense);
        for (i, layer) in self.kan.iter().enumerate().rev() {
            d = layer.backward(&cache.kan[i].1, &d, &mut g.kan[i]);
        }
        let d_n1 = self.rnn2.backward(&cache.rnn2, &cache.lengths, None, Some(d.as_slice()), &mut g.rnn2);
        let bn_cache = cache.bn.as_ref().expect("train mode");
        let d_h1 = self.bn.backward(bn_cache, &d_n1, &cache.lengths, &mut g.bn);
        self.rnn1.backward(&cache.rnn1, &cache.lengths, Some(&d_h1), None, &mut g.rnn1);
        Ok(g)
    }

    pub fn to_file_format(&self) -> ModelFile {
        let mut tensors: Vec<NamedTensor> = self
            .tensors()
            .into_iter()
            .map(|t| NamedTensor { name: t.name, shape: [t.shape.0, t.shape.1], data: t.data.to_vec() })
            .collect();
        for (name, v) in [("bn.running_mean", &self.bn.running_mean), ("bn.running_var", &self.bn.running_var)] {
            tensors.push(NamedTensor { name: name.to_string(), shape: [1, v.len()], data: v.clone() });
        }
        ModelFile { format: MODEL_FORMAT.to_string(), version: MODEL_VERSION, spec: self.spec.clone(), tensors }
    }

    pub fn from_file_format(file: ModelFile) -> Result<Self> {
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(invalid!("unsupported model file {} v{}", file.format, file.version));
        }
        let mut p = ModelParams::init(&file.spec, &mut SeededRng::new(0))?.zeros_like();
        p.bn = BatchNormParams::new(file.spec.rnn1_units, file.spec.bn_epsilon, file.spec.bn_momentum);
        let mut by_name: std::collections::HashMap<String, NamedTensor> =
            file.tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        let mut take = |name: &str, shape: (usize, usize), dst: &mut [f64]| -> Result<()> {
            let t = by_name.remove(name).ok_or_else(|| invalid!("model file lacks tensor {name}"))?;
            if t.shape != [shape.0, shape.1] || t.data.len() != dst.len() {
                return Err(shape_err!("tensor {name} has shape {:?}, expected {:?}", t.shape, shape));
            }
            dst.copy_from_slice(&t.data);
            Ok(())
        };
        for t in p.tensors_mut() {
            take(&t.name, t.shape, t.data)?;
        }
        let d = p.bn.dim();
        take("bn.running_mean", (1, d), &mut p.bn.running_mean)?;
        take("bn.running_var", (1, d), &mut p.bn.running_var)?;
        if let Some(name) = by_name.keys().next() {
            return Err(invalid!("unexpected tensor {name} in model file"));
        }
        Ok(p)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &self.to_file_format())?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_file_format(serde_json::from_reader(f)?)
    }
}

fn collect_tensors(p: &ModelParams) -> Vec<(String, (usize, usize), &[f64])> {
    fn rnn_tensors<'a>(prefix: &str, r: &'a RnnParams, out: &mut Vec<(String, (usize, usize), &'a [f64])>) {
        match r {
            RnnParams::Lstm(p) => {
                for ((g, w), b) in LSTM_GATES.iter().zip(p.w.iter()).zip(p.b.iter()) {
                    let shape = w.shape();
                    out.push((format!("{prefix}.W_{g}"), shape, w.as_slice()));
                    out.push((format!("{prefix}.b_{g}"), (1, b.len()), b.as_slice()));
                }
            }
            RnnParams::Gru(p) => {
                for (((g, w), u), b) in GRU_GATES.iter().zip(p.w.iter()).zip(p.u.iter()).zip(p.b.iter()) {
                    let shape = w.shape();
                    out.push((format!("{prefix}.W_{g}"), shape, w.as_slice()));
                    let shape = u.shape();
                    out.push((format!("{prefix}.U_{g}"), shape, u.as_slice()));
                    out.push((format!("{prefix}.b_{g}"), (1, b.len()), b.as_slice()));
                }
            }
        }
    }
    let ModelParams { rnn1, bn, rnn2, kan, dense, output, .. } = p;
    let mut out = Vec::new();
    rnn_tensors("rnn1", rnn1, &mut out);
    out.push(("bn.gamma".to_string(), (1, bn.gamma.len()), bn.gamma.as_slice()));
    out.push(("bn.beta".to_string(), (1, bn.beta.len()), bn.beta.as_slice()));
    rnn_tensors("rnn2", rnn2, &mut out);
    for (i, k) in kan.iter().enumerate() {
        let shape = k.coeffs.shape();
        out.push((format!("kan{i}.coeffs"), shape, k.coeffs.as_slice()));
        let shape = k.base_weight.shape();
        out.push((format!("kan{i}.base_weight"), shape, k.base_weight.as_slice()));
    }
    for (name, d) in [("dense", dense), ("output", output)] {
        let shape = d.weight.shape();
        out.push((format!("{name}.weight"), shape, d.weight.as_slice()));
        out.push((format!("{name}.bias"), (1, d.bias.len()), d.bias.as_slice()));
    }
    out
}

fn collect_tensors_mut(p: &mut ModelParams) -> Vec<(String, (usize, usize), &mut [f64])> {
    fn rnn_tensors<'a>(prefix: &str, r: &'a mut RnnParams, out: &mut Vec<(String, (usize, usize), &'a mut [f64])>) {
        match r {
            RnnParams::Lstm(p) => {
                for ((g, w), b) in LSTM_GATES.iter().zip(p.w.iter_mut()).zip(p.b.iter_mut()) {
                    let shape = w.shape();
                    out.push((format!("{prefix}.W_{g}"), shape, w.as_mut_slice()));
                    out.push((format!("{prefix}.b_{g}"), (1, b.len()), b.as_mut_slice()));
                }
            }
            RnnParams::Gru(p) => {
                for (((g, w), u), b) in GRU_GATES.iter().zip(p.w.iter_mut()).zip(p.u.iter_mut()).zip(p.b.iter_mut()) {
                    let shape = w.shape();
                    out.push((format!("{prefix}.W_{g}"), shape, w.as_mut_slice()));
                    let shape = u.shape();
                    out.push((format!("{prefix}.U_{g}"), shape, u.as_mut_slice()));
                    out.push((format!("{prefix}.b_{g}"), (1, b.len()), b.as_mut_slice()));
                }
            }
        }
    }
    let ModelParams { rnn1, bn, rnn2, kan, dense, output, .. } = p;
    let mut out = Vec::new();
    rnn_tensors("rnn1", rnn1, &mut out);
    out.push(("bn.gamma".to_string(), (1, bn.gamma.len()), bn.gamma.as_mut_slice()));
    out.push(("bn.beta".to_string(), (1, bn.beta.len()), bn.beta.as_mut_slice()));
    rnn_tensors("rnn2", rnn2, &mut out);
    for (i, k) in kan.iter_mut().enumerate() {
        let shape = k.coeffs.shape();
        out.push((format!("kan{i}.coeffs"), shape, k.coeffs.as_mut_slice()));
        let shape = k.base_weight.shape();
        out.push((format!("kan{i}.base_weight"), shape, k.base_weight.as_mut_slice()));
    }
    for (name, d) in [("dense", dense), ("output", output)] {
        let shape = d.weight.shape();
        out.push((format!("{name}.weight"), shape, d.weight.as_mut_slice()));
        out.push((format!("{name}.bias"), (1, d.bias.len()), d.bias.as_mut_slice()));
    }
    out
}

fn last_step(s: &Seq, batch: usize) -> Matrix {
    if s.time == 0 {
        return Matrix::zeros(batch, s.dim);
    }
    Matrix::from_vec(batch, s.dim, s.step(s.time - 1).to_vec()).expect("step size")
}

/// Forward pass of the full stack; see [`ModelParams::forward`].
pub fn model_forward(params: &ModelParams, batch: &MaskedBatch, mode: Mode, rng: &mut SeededRng) -> Result<Vec<f64>> {
    params.forward(batch, mode, rng)
}

pub const MODEL_FORMAT: &str = "seqkan-model";
pub const MODEL_VERSION: u32 = 1;

/// On-disk model representation: architecture header plus named tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}
