//! LSTM and GRU cells, masked sequence unrolling and backpropagation through time.
//!
//! LSTM gates act on the concatenation `[h_{t-1}, x_t]`; each gate matrix is
//! `hidden × (hidden + input)` with the recurrent block in the first `hidden`
//! columns. GRU keeps separate input (`W_*`, `hidden × input`) and recurrent
//! (`U_*`, `hidden × hidden`) matrices. Padded steps leave both the hidden and
//! the cell state untouched and receive no gradient.

use serde::{Deserialize, Serialize};

use super::{checked_lengths, MaskedBatch, Seq};
use crate::error::{shape_err, Result};
use crate::tensor::{gemm, sigmoid, MatRef, Matrix, SeededRng};

pub const LSTM_GATES: [&str; 4] = ["f", "i", "c", "o"];
pub const GRU_GATES: [&str; 3] = ["z", "r", "h"];

const F: usize = 0;
const I: usize = 1;
const C: usize = 2;
const O: usize = 3;

const Z: usize = 0;
const R: usize = 1;
const H: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Gate matrices in `f, i, c, o` order.
    pub w: [Matrix; 4],
    pub b: [Vec<f64>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Input matrices in `z, r, h` order.
    pub w: [Matrix; 3],
    /// Recurrent matrices in `z, r, h` order.
    pub u: [Matrix; 3],
    pub b: [Vec<f64>; 3],
}

pub(crate) fn glorot(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-limit, limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let m = || Matrix::zeros(hidden_dim, hidden_dim + input_dim);
        Self {
            input_dim,
            hidden_dim,
            w: [m(), m(), m(), m()],
            b: std::array::from_fn(|_| vec![0.0; hidden_dim]),
        }
    }

    /// Glorot-uniform gate matrices, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        for w in &mut p.w {
            *w = glorot(rng, hidden_dim, hidden_dim + input_dim);
        }
        p
    }
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w: std::array::from_fn(|_| Matrix::zeros(hidden_dim, input_dim)),
            u: std::array::from_fn(|_| Matrix::zeros(hidden_dim, hidden_dim)),
            b: std::array::from_fn(|_| vec![0.0; hidden_dim]),
        }
    }

    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        for g in 0..3 {
            p.w[g] = glorot(rng, hidden_dim, input_dim);
            p.u[g] = glorot(rng, hidden_dim, hidden_dim);
        }
        p
    }
}

fn matvec_into(w: &Matrix, col0: usize, v: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w.row(r)[col0..col0 + v.len()];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// One LSTM step; returns `(h_t, c_t)`.
pub fn lstm_step(p: &LstmParams, h_prev: &[f64], c_prev: &[f64], x_t: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let hd = p.hidden_dim;
    if h_prev.len() != hd || c_prev.len() != hd || x_t.len() != p.input_dim {
        return Err(shape_err!(
            "lstm_step: h {} c {} x {} for hidden {hd} input {}",
            h_prev.len(),
            c_prev.len(),
            x_t.len(),
            p.input_dim
        ));
    }
    let pre = |g: usize| {
        let mut a = p.b[g].clone();
        matvec_into(&p.w[g], 0, h_prev, &mut a);
        matvec_into(&p.w[g], hd, x_t, &mut a);
        a
    };
    let (f, i, g, o) = (pre(F), pre(I), pre(C), pre(O));
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for j in 0..hd {
        c[j] = sigmoid(f[j]) * c_prev[j] + sigmoid(i[j]) * g[j].tanh();
        h[j] = sigmoid(o[j]) * c[j].tanh();
    }
    Ok((h, c))
}

/// One GRU step; returns `h_t`.
pub fn gru_step(p: &GruParams, h_prev: &[f64], x_t: &[f64]) -> Result<Vec<f64>> {
    let hd = p.hidden_dim;
    if h_prev.len() != hd || x_t.len() != p.input_dim {
        return Err(shape_err!("gru_step: h {} x {} for hidden {hd} input {}", h_prev.len(), x_t.len(), p.input_dim));
    }
    let gate = |g: usize, h: &[f64]| {
        let mut a = p.b[g].clone();
        matvec_into(&p.w[g], 0, x_t, &mut a);
        matvec_into(&p.u[g], 0, h, &mut a);
        a
    };
    let z: Vec<f64> = gate(Z, h_prev).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(R, h_prev).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let cand = gate(H, &rh);
    Ok((0..hd).map(|j| z[j] * h_prev[j] + (1.0 - z[j]) * cand[j].tanh()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RnnParams {
    Lstm(LstmParams),
    Gru(GruParams),
}

/// Result of unrolling a recurrent layer over a [`MaskedBatch`].
#[derive(Debug, Clone, PartialEq)]
pub enum RnnOutput {
    /// Per sequence, a `time × hidden` matrix of states (padded steps repeat the last state).
    Sequences(Vec<Matrix>),
    /// `batch × hidden` state after each sequence's last valid step.
    Final(Matrix),
}

/// Unrolls `cell` over `batch`.
pub fn rnn_sequence_forward(cell: &RnnParams, batch: &MaskedBatch, return_sequences: bool) -> Result<RnnOutput> {
    let (states, _) = cell.forward(&batch.to_seq(), batch.lengths())?;
    let (t_len, b_len, h) = (states.time, states.batch, states.dim);
    if return_sequences {
        let out = (0..b_len)
            .map(|b| {
                let rows: Vec<&[f64]> = (0..t_len).map(|t| states.row(t, b)).collect();
                Matrix::from_rows(&rows).expect("uniform rows")
            })
            .collect();
        Ok(RnnOutput::Sequences(out))
    } else {
        let last = if t_len == 0 { vec![0.0; b_len * h] } else { states.step(t_len - 1).to_vec() };
        Ok(RnnOutput::Final(Matrix::from_vec(b_len, h, last)?))
    }
}

/// Saved activations for backpropagation through time.
#[derive(Debug, Clone)]
pub(crate) enum RnnCache {
    Lstm {
        x: Seq,
        h_prev: Seq,
        c_prev: Seq,
        gates: [Vec<f64>; 4],
        tanh_c: Vec<f64>,
    },
    Gru {
        x: Seq,
        h_prev: Seq,
        gates: [Vec<f64>; 3],
        rh: Vec<f64>,
    },
}

fn add_bias_rows(buf: &mut [f64], bias: &[f64]) {
    for row in buf.chunks_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

fn col_sums_into(buf: &[f64], out: &mut [f64]) {
    for row in buf.chunks(out.len()) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
}

impl RnnParams {
    pub fn hidden_dim(&self) -> usize {
        match self {
            RnnParams::Lstm(p) => p.hidden_dim,
            RnnParams::Gru(p) => p.hidden_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            RnnParams::Lstm(p) => p.input_dim,
            RnnParams::Gru(p) => p.input_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            RnnParams::Lstm(p) => RnnParams::Lstm(LstmParams::zeros(p.input_dim, p.hidden_dim)),
            RnnParams::Gru(p) => RnnParams::Gru(GruParams::zeros(p.input_dim, p.hidden_dim)),
        }
    }

    /// Returns the state after every step (`time × batch × hidden`) plus the cache.
    pub(crate) fn forward(&self, x: &Seq, lengths: &[usize]) -> Result<(Seq, RnnCache)> {
        if x.dim != self.input_dim() {
            return Err(shape_err!("recurrent layer expects {} features, got {}", self.input_dim(), x.dim));
        }
        if lengths.len() != x.batch {
            return Err(shape_err!("{} lengths for batch {}", lengths.len(), x.batch));
        }
        checked_lengths(lengths)?;
        Ok(match self {
            RnnParams::Lstm(p) => lstm_forward(p, x, lengths),
            RnnParams::Gru(p) => gru_forward(p, x, lengths),
        })
    }

    /// Backpropagates `d_seq` (gradient w.r.t. every step's state, optional) and
    /// `d_final` (gradient w.r.t. the last state, optional). Parameter
    /// gradients are accumulated into `grads`; returns the input gradient.
    pub(crate) fn backward(
        &self,
        cache: &RnnCache,
        lengths: &[usize],
        d_seq: Option<&Seq>,
        d_final: Option<&[f64]>,
        grads: &mut RnnParams,
    ) -> Seq {
        match (self, cache, grads) {
            (RnnParams::Lstm(p), RnnCache::Lstm { .. }, RnnParams::Lstm(g)) => {
                lstm_backward(p, cache, lengths, d_seq, d_final, g)
            }
            (RnnParams::Gru(p), RnnCache::Gru { .. }, RnnParams::Gru(g)) => {
                gru_backward(p, cache, lengths, d_seq, d_final, g)
            }
            _ => panic!("recurrent cache/gradient kind does not match parameters"),
        }
    }
}

fn lstm_forward(p: &LstmParams, x: &Seq, lengths: &[usize]) -> (Seq, RnnCache) {
    let (tl, bl, hd, id) = (x.time, x.batch, p.hidden_dim, p.input_dim);
    let n = bl * hd;
    let x_all = MatRef::new(&x.data, tl * bl, id);
    let mut gates: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; tl * n]);
    for g in 0..4 {
        gemm(1.0, x_all, p.w[g].view_cols(hd, id).t(), 0.0, &mut gates[g]);
        add_bias_rows(&mut gates[g], &p.b[g]);
    }
    let mut h_prev = Seq::zeros(tl, bl, hd);
    let mut c_prev = Seq::zeros(tl, bl, hd);
    let mut tanh_c = vec![0.0; tl * n];
    let mut out = Seq::zeros(tl, bl, hd);
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    for t in 0..tl {
        h_prev.step_mut(t).copy_from_slice(&h);
        c_prev.step_mut(t).copy_from_slice(&c);
        let hv = MatRef::new(&h, bl, hd);
        for g in 0..4 {
            gemm(1.0, hv, p.w[g].view_cols(0, hd).t(), 1.0, &mut gates[g][t * n..(t + 1) * n]);
        }
        for b in 0..bl {
            let o = t * n + b * hd;
            if t >= lengths[b] {
                for g in gates.iter_mut() {
                    g[o..o + hd].fill(0.0);
                }
                continue;
            }
            for j in 0..hd {
                let k = o + j;
                let f = sigmoid(gates[F][k]);
                let i = sigmoid(gates[I][k]);
                let cc = gates[C][k].tanh();
                let og = sigmoid(gates[O][k]);
                gates[F][k] = f;
                gates[I][k] = i;
                gates[C][k] = cc;
                gates[O][k] = og;
                let cn = f * c[b * hd + j] + i * cc;
                let tc = cn.tanh();
                tanh_c[k] = tc;
                c[b * hd + j] = cn;
                h[b * hd + j] = og * tc;
            }
        }
        out.step_mut(t).copy_from_slice(&h);
    }
    (out, RnnCache::Lstm { x: x.clone(), h_prev, c_prev, gates, tanh_c })
}

fn lstm_backward(
    p: &LstmParams,
    cache: &RnnCache,
    lengths: &[usize],
    d_seq: Option<&Seq>,
    d_final: Option<&[f64]>,
    grads: &mut LstmParams,
) -> Seq {
    let RnnCache::Lstm { x, h_prev, c_prev, gates, tanh_c } = cache else { unreachable!() };
    let (tl, bl, hd, id) = (x.time, x.batch, p.hidden_dim, p.input_dim);
    let n = bl * hd;
    let mut dh = d_final.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut dc = vec![0.0; n];
    let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; tl * n]);
    let mut tmp = vec![0.0; n];
    for t in (0..tl).rev() {
        if let Some(ds) = d_seq {
            dh.iter_mut().zip(ds.step(t)).for_each(|(a, b)| *a += b);
        }
        for b in 0..bl {
            if t >= lengths[b] {
                continue;
            }
            for j in 0..hd {
                let s = b * hd + j;
                let k = t * n + s;
                let (f, i, g, o) = (gates[F][k], gates[I][k], gates[C][k], gates[O][k]);
                let tc = tanh_c[k];
                let d_o = dh[s] * tc;
                let dct = dc[s] + dh[s] * o * (1.0 - tc * tc);
                da[F][k] = dct * c_prev.data[k] * f * (1.0 - f);
                da[I][k] = dct * g * i * (1.0 - i);
                da[C][k] = dct * i * (1.0 - g * g);
                da[O][k] = d_o * o * (1.0 - o);
                dc[s] = dct * f;
            }
        }
        tmp.fill(0.0);
        for g in 0..4 {
            gemm(1.0, MatRef::new(&da[g][t * n..(t + 1) * n], bl, hd), p.w[g].view_cols(0, hd), 1.0, &mut tmp);
        }
        for b in 0..bl {
            if t < lengths[b] {
                dh[b * hd..(b + 1) * hd].copy_from_slice(&tmp[b * hd..(b + 1) * hd]);
            }
        }
    }
    // [h_prev | x] for every (t, b) row
    let mut z_all = vec![0.0; tl * bl * (hd + id)];
    for r in 0..tl * bl {
        let row = &mut z_all[r * (hd + id)..(r + 1) * (hd + id)];
        row[..hd].copy_from_slice(&h_prev.data[r * hd..(r + 1) * hd]);
        row[hd..].copy_from_slice(&x.data[r * id..(r + 1) * id]);
    }
    let z_ref = MatRef::new(&z_all, tl * bl, hd + id);
    let mut dx = Seq::zeros(tl, bl, id);
    for g in 0..4 {
        let da_ref = MatRef::new(&da[g], tl * bl, hd);
        gemm(1.0, da_ref.t(), z_ref, 1.0, grads.w[g].as_mut_slice());
        col_sums_into(&da[g], &mut grads.b[g]);
        gemm(1.0, da_ref, p.w[g].view_cols(hd, id), 1.0, &mut dx.data);
    }
    dx
}

fn gru_forward(p: &GruParams, x: &Seq, lengths: &[usize]) -> (Seq, RnnCache) {
    let (tl, bl, hd, id) = (x.time, x.batch, p.hidden_dim, p.input_dim);
    let n = bl * hd;
    let x_all = MatRef::new(&x.data, tl * bl, id);
    let mut gates: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; tl * n]);
    for g in 0..3 {
        gemm(1.0, x_all, p.w[g].view().t(), 0.0, &mut gates[g]);
        add_bias_rows(&mut gates[g], &p.b[g]);
    }
    let mut h_prev = Seq::zeros(tl, bl, hd);
    let mut rh = vec![0.0; tl * n];
    let mut out = Seq::zeros(tl, bl, hd);
    let mut h = vec![0.0; n];
    for t in 0..tl {
        h_prev.step_mut(t).copy_from_slice(&h);
        let span = t * n..(t + 1) * n;
        let hv = MatRef::new(&h, bl, hd);
        gemm(1.0, hv, p.u[Z].view().t(), 1.0, &mut gates[Z][span.clone()]);
        gemm(1.0, hv, p.u[R].view().t(), 1.0, &mut gates[R][span.clone()]);
        for k in span.clone() {
            gates[Z][k] = sigmoid(gates[Z][k]);
            gates[R][k] = sigmoid(gates[R][k]);
            rh[k] = gates[R][k] * h[k - t * n];
        }
        gemm(1.0, MatRef::new(&rh[span.clone()], bl, hd), p.u[H].view().t(), 1.0, &mut gates[H][span]);
        for b in 0..bl {
            let o = t * n + b * hd;
            if t >= lengths[b] {
                for g in gates.iter_mut() {
                    g[o..o + hd].fill(0.0);
                }
                rh[o..o + hd].fill(0.0);
                continue;
            }
            for j in 0..hd {
                let k = o + j;
                let cand = gates[H][k].tanh();
                gates[H][k] = cand;
                let z = gates[Z][k];
                h[b * hd + j] = z * h[b * hd + j] + (1.0 - z) * cand;
            }
        }
        out.step_mut(t).copy_from_slice(&h);
    }
    (out, RnnCache::Gru { x: x.clone(), h_prev, gates, rh })
}

fn gru_backward(
    p: &GruParams,
    cache: &RnnCache,
    lengths: &[usize],
    d_seq: Option<&Seq>,
    d_final: Option<&[f64]>,
    grads: &mut GruParams,
) -> Seq {
    let RnnCache::Gru { x, h_prev, gates, rh } = cache else { unreachable!() };
    let (tl, bl, hd, id) = (x.time, x.batch, p.hidden_dim, p.input_dim);
    let n = bl * hd;
    let mut dh = d_final.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut da: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; tl * n]);
    let mut d_rh = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for t in (0..tl).rev() {
        if let Some(ds) = d_seq {
            dh.iter_mut().zip(ds.step(t)).for_each(|(a, b)| *a += b);
        }
        let base = t * n;
        for b in 0..bl {
            if t >= lengths[b] {
                continue;
            }
            for j in 0..hd {
                let s = b * hd + j;
                let k = base + s;
                let (z, cand) = (gates[Z][k], gates[H][k]);
                da[H][k] = dh[s] * (1.0 - z) * (1.0 - cand * cand);
                // store dz temporarily; converted to a pre-activation gradient below
                da[Z][k] = dh[s] * (h_prev.data[k] - cand) * z * (1.0 - z);
                acc[s] = dh[s] * z;
            }
        }
        d_rh.fill(0.0);
        gemm(1.0, MatRef::new(&da[H][base..base + n], bl, hd), p.u[H].view(), 0.0, &mut d_rh);
        for b in 0..bl {
            if t >= lengths[b] {
                continue;
            }
            for j in 0..hd {
                let s = b * hd + j;
                let k = base + s;
                let r = gates[R][k];
                da[R][k] = d_rh[s] * h_prev.data[k] * r * (1.0 - r);
                acc[s] += d_rh[s] * r;
            }
        }
        for g in [Z, R] {
            gemm(1.0, MatRef::new(&da[g][base..base + n], bl, hd), p.u[g].view(), 1.0, &mut acc);
        }
        for b in 0..bl {
            if t < lengths[b] {
                dh[b * hd..(b + 1) * hd].copy_from_slice(&acc[b * hd..(b + 1) * hd]);
            }
        }
    }
    let x_ref = MatRef::new(&x.data, tl * bl, id);
    let hp_ref = MatRef::new(&h_prev.data, tl * bl, hd);
    let rh_ref = MatRef::new(rh, tl * bl, hd);
    let mut dx = Seq::zeros(tl, bl, id);
    for g in 0..3 {
        let da_ref = MatRef::new(&da[g], tl * bl, hd);
        gemm(1.0, da_ref.t(), x_ref, 1.0, grads.w[g].as_mut_slice());
        let rec = if g == H { rh_ref } else { hp_ref };
        gemm(1.0, da_ref.t(), rec, 1.0, grads.u[g].as_mut_slice());
        col_sums_into(&da[g], &mut grads.b[g]);
        gemm(1.0, da_ref, p.w[g].view(), 1.0, &mut dx.data);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
        rng.normals(n, 0.0, 0.7)
    }

    fn random_lstm(rng: &mut SeededRng, i: usize, h: usize) -> LstmParams {
        let mut p = LstmParams::init(i, h, rng);
        for b in &mut p.b {
            *b = rand_vec(rng, h);
        }
        p
    }

    fn random_gru(rng: &mut SeededRng, i: usize, h: usize) -> GruParams {
        let mut p = GruParams::init(i, h, rng);
        for b in &mut p.b {
            *b = rand_vec(rng, h);
        }
        p
    }

    #[test]
    fn lstm_zero_params() {
        let p = LstmParams::zeros(2, 3);
        let c = vec![0.4, -1.0, 2.0];
        let (h, cn) = lstm_step(&p, &[0.3, 0.1, -0.2], &c, &[1.0, 5.0]).unwrap();
        for j in 0..3 {
            assert!((cn[j] - 0.5 * c[j]).abs() < 1e-15);
            assert!((h[j] - 0.5 * (0.5 * c[j]).tanh()).abs() < 1e-15);
        }
        let (h, c) = lstm_step(&p, &[0.0; 3], &[0.0; 3], &[1.0, 2.0]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn gru_zero_params() {
        let p = GruParams::zeros(2, 3);
        let hp = [0.8, -0.6, 0.1];
        let h = gru_step(&p, &hp, &[3.0, -1.0]).unwrap();
        for j in 0..3 {
            assert!((h[j] - 0.5 * hp[j]).abs() < 1e-15);
        }
        assert_eq!(gru_step(&p, &[0.0; 3], &[1.0, 1.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn step_dimension_errors() {
        let p = LstmParams::zeros(2, 3);
        assert!(lstm_step(&p, &[0.0; 2], &[0.0; 3], &[0.0; 2]).is_err());
        let g = GruParams::zeros(2, 3);
        assert!(gru_step(&g, &[0.0; 3], &[0.0; 3]).is_err());
    }

    fn batch_of(rng: &mut SeededRng, lens: &[usize], time: usize, dim: usize) -> MaskedBatch {
        let seqs: Vec<Vec<Vec<f64>>> =
            lens.iter().map(|&l| (0..l).map(|_| rand_vec(rng, dim)).collect()).collect();
        MaskedBatch::from_sequences_padded(&seqs, dim, time).unwrap()
    }

    fn final_state(o: RnnOutput) -> Matrix {
        match o {
            RnnOutput::Final(m) => m,
            RnnOutput::Sequences(_) => unreachable!(),
        }
    }

    #[test]
    fn one_step_sequence_equals_cell_step() {
        let mut rng = SeededRng::new(2);
        let lstm = random_lstm(&mut rng, 3, 4);
        let gru = random_gru(&mut rng, 3, 4);
        let batch = batch_of(&mut rng, &[1], 1, 3);
        let x = batch.step(0, 0).to_vec();
        let (h, _) = lstm_step(&lstm, &[0.0; 4], &[0.0; 4], &x).unwrap();
        let out = final_state(rnn_sequence_forward(&RnnParams::Lstm(lstm), &batch, false).unwrap());
        for j in 0..4 {
            assert!((out.get(0, j) - h[j]).abs() < 1e-14);
        }
        let h = gru_step(&gru, &[0.0; 4], &x).unwrap();
        let out = final_state(rnn_sequence_forward(&RnnParams::Gru(gru), &batch, false).unwrap());
        for j in 0..4 {
            assert!((out.get(0, j) - h[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn unrolled_sequence_matches_manual_composition() {
        let mut rng = SeededRng::new(5);
        let lstm = random_lstm(&mut rng, 2, 3);
        let gru = random_gru(&mut rng, 2, 3);
        let batch = batch_of(&mut rng, &[4, 2], 4, 2);
        let lo = final_state(rnn_sequence_forward(&RnnParams::Lstm(lstm.clone()), &batch, false).unwrap());
        let go = final_state(rnn_sequence_forward(&RnnParams::Gru(gru.clone()), &batch, false).unwrap());
        for (b, &len) in batch.lengths().iter().enumerate() {
            let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
            let mut hg = vec![0.0; 3];
            for t in 0..len {
                (h, c) = lstm_step(&lstm, &h, &c, batch.step(b, t)).unwrap();
                hg = gru_step(&gru, &hg, batch.step(b, t)).unwrap();
            }
            for j in 0..3 {
                assert!((lo.get(b, j) - h[j]).abs() < 1e-13);
                assert!((go.get(b, j) - hg[j]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn padding_does_not_change_final_state() {
        let mut rng = SeededRng::new(8);
        let cells = [RnnParams::Lstm(random_lstm(&mut rng, 2, 3)), RnnParams::Gru(random_gru(&mut rng, 2, 3))];
        let batch = batch_of(&mut rng, &[3, 1, 2], 3, 2);
        for cell in &cells {
            let a = final_state(rnn_sequence_forward(cell, &batch, false).unwrap());
            let b = final_state(rnn_sequence_forward(cell, &batch.with_extra_padding(3), false).unwrap());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sequence_output_repeats_state_over_padding() {
        let mut rng = SeededRng::new(9);
        let cell = RnnParams::Gru(random_gru(&mut rng, 2, 3));
        let batch = batch_of(&mut rng, &[2], 4, 2);
        let RnnOutput::Sequences(s) = rnn_sequence_forward(&cell, &batch, true).unwrap() else { unreachable!() };
        assert_eq!(s[0].row(1), s[0].row(3));
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let cell = RnnParams::Gru(GruParams::zeros(1, 2));
        let batch = MaskedBatch::new(1, 2, 1, vec![0.0, 0.0], vec![false, false]).unwrap();
        assert!(rnn_sequence_forward(&cell, &batch, false).is_err());
    }

    #[test]
    fn gru_state_is_convex_combination() {
        let mut rng = SeededRng::new(12);
        for _ in 0..50 {
            let p = random_gru(&mut rng, 3, 4);
            let hp: Vec<f64> = rand_vec(&mut rng, 4).into_iter().map(f64::tanh).collect();
            let x = rand_vec(&mut rng, 3);
            let h = gru_step(&p, &hp, &x).unwrap();
            // candidate recomputed independently
            let r: Vec<f64> = (0..4)
                .map(|j| sigmoid(p.b[R][j] + dot(p.w[R].row(j), &x) + dot(p.u[R].row(j), &hp)))
                .collect();
            let rh: Vec<f64> = r.iter().zip(&hp).map(|(a, b)| a * b).collect();
            for j in 0..4 {
                let cand = (p.b[H][j] + dot(p.w[H].row(j), &x) + dot(p.u[H].row(j), &rh)).tanh();
                let (lo, hi) = (hp[j].min(cand), hp[j].max(cand));
                assert!(h[j] >= lo - 1e-15 && h[j] <= hi + 1e-15);
            }
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}
