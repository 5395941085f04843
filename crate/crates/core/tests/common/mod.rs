//! Independent scalar references used by the integration tests.

#![allow(dead_code, clippy::needless_range_loop)]

use seqkan::layers::model::ModelKind;
use seqkan::layers::{GruParams, LstmParams, MaskedBatch, ModelParams, ModelSpec, RnnParams};
use seqkan::tensor::{Activation, Matrix, SeededRng};

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn randn(rng: &mut SeededRng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| rng.normal(0.0, std)).collect()
}

fn fill(m: &mut Matrix, rng: &mut SeededRng, std: f64) {
    m.as_mut_slice().iter_mut().for_each(|v| *v = rng.normal(0.0, std));
}

pub fn random_lstm(input: usize, hidden: usize, rng: &mut SeededRng) -> LstmParams {
    let mut p = LstmParams::zeros(input, hidden);
    p.w.iter_mut().for_each(|m| fill(m, rng, 0.7));
    p.b.iter_mut().for_each(|b| *b = randn(rng, hidden, 0.5));
    p
}

pub fn random_gru(input: usize, hidden: usize, rng: &mut SeededRng) -> GruParams {
    let mut p = GruParams::zeros(input, hidden);
    p.w.iter_mut().chain(p.u.iter_mut()).for_each(|m| fill(m, rng, 0.7));
    p.b.iter_mut().for_each(|b| *b = randn(rng, hidden, 0.5));
    p
}

/// LSTM step written gate by gate over scalars; weights act on `[h_prev, x]`.
pub fn lstm_oracle(p: &LstmParams, h: &[f64], c: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = p.hidden_dim;
    let mut h_out = vec![0.0; hd];
    let mut c_out = vec![0.0; hd];
    for j in 0..hd {
        let mut pre = [0.0; 4];
        for (g, slot) in pre.iter_mut().enumerate() {
            let mut a = p.b[g][j];
            for k in 0..hd {
                a += p.w[g].get(j, k) * h[k];
            }
            for k in 0..p.input_dim {
                a += p.w[g].get(j, hd + k) * x[k];
            }
            *slot = a;
        }
        let f = sig(pre[0]);
        let i = sig(pre[1]);
        let cand = pre[2].tanh();
        let o = sig(pre[3]);
        c_out[j] = f * c[j] + i * cand;
        h_out[j] = o * c_out[j].tanh();
    }
    (h_out, c_out)
}

pub fn gru_oracle(p: &GruParams, h: &[f64], x: &[f64]) -> Vec<f64> {
    let hd = p.hidden_dim;
    let affine = |g: usize, j: usize, hv: &[f64]| {
        let mut a = p.b[g][j];
        for k in 0..p.input_dim {
            a += p.w[g].get(j, k) * x[k];
        }
        for k in 0..hd {
            a += p.u[g].get(j, k) * hv[k];
        }
        a
    };
    let r: Vec<f64> = (0..hd).map(|j| sig(affine(1, j, h))).collect();
    let rh: Vec<f64> = (0..hd).map(|j| r[j] * h[j]).collect();
    (0..hd)
        .map(|j| {
            let z = sig(affine(0, j, h));
            let cand = affine(2, j, &rh).tanh();
            z * h[j] + (1.0 - z) * cand
        })
        .collect()
}

/// Clamped uniform knot vector built from scratch.
pub fn knots(lo: f64, hi: f64, order: usize, num_functions: usize) -> Vec<f64> {
    let spans = num_functions - order;
    let mut k = vec![lo; order + 1];
    for i in 1..spans {
        k.push(lo + (hi - lo) * i as f64 / spans as f64);
    }
    k.extend(vec![hi; order + 1]);
    k
}

/// Cox–de Boor recursion; the right end of the grid belongs to the last basis function.
pub fn bspline(knots: &[f64], order: usize, i: usize, x: f64) -> f64 {
    if order == 0 {
        let last_span = knots[i + 1] == *knots.last().unwrap() && knots[i] < knots[i + 1];
        return if (knots[i] <= x && x < knots[i + 1]) || (last_span && x == knots[i + 1]) { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + order] - knots[i];
    if d1 > 0.0 {
        v += (x - knots[i]) / d1 * bspline(knots, order - 1, i, x);
    }
    let d2 = knots[i + order + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + order + 1] - x) / d2 * bspline(knots, order - 1, i + 1, x);
    }
    v
}

pub fn edge_oracle(coeffs: &[f64], lo: f64, hi: f64, order: usize, base: f64, x: f64) -> f64 {
    let kn = knots(lo, hi, order, coeffs.len());
    let xc = x.clamp(lo, hi);
    let spline: f64 = coeffs.iter().enumerate().map(|(k, c)| c * bspline(&kn, order, k, xc)).sum();
    base * x * sig(x) + spline
}

pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Random batch with lengths in `[1, time]`, at least one sequence at full length.
pub fn random_batch(rng: &mut SeededRng, batch: usize, time: usize, dim: usize) -> MaskedBatch {
    let seqs: Vec<Vec<Vec<f64>>> = (0..batch)
        .map(|b| {
            let len = if b == 0 { time } else { rng.int_range(1, time) };
            (0..len).map(|_| randn(rng, dim, 1.0)).collect()
        })
        .collect();
    MaskedBatch::from_sequences_padded(&seqs, dim, time).unwrap()
}

pub fn small_spec(kind: ModelKind, dim: usize) -> ModelSpec {
    let mut s = ModelSpec::for_kind(kind, dim);
    s.rnn1_units = 5;
    s.rnn2_units = 4;
    s.dense_units = 6;
    s.kan_num_functions = 6;
    s
}

/// Model with every tensor randomized, including batch-norm running statistics.
pub fn random_model(spec: &ModelSpec, rng: &mut SeededRng) -> ModelParams {
    let mut p = ModelParams::init(spec, rng).unwrap();
    for t in p.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += rng.normal(0.0, 0.3));
    }
    p.bn.running_mean = randn(rng, p.bn.running_mean.len(), 0.2);
    p.bn.running_var = (0..p.bn.running_var.len()).map(|_| rng.uniform_range(0.3, 1.5)).collect();
    p
}

fn rnn_final(cell: &RnnParams, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    match cell {
        RnnParams::Lstm(p) => {
            let (mut h, mut c) = (vec![0.0; p.hidden_dim], vec![0.0; p.hidden_dim]);
            for x in xs {
                (h, c) = lstm_oracle(p, &h, &c, x);
                out.push(h.clone());
            }
        }
        RnnParams::Gru(p) => {
            let mut h = vec![0.0; p.hidden_dim];
            for x in xs {
                h = gru_oracle(p, &h, x);
                out.push(h.clone());
            }
        }
    }
    out
}

fn dense(w: &Matrix, b: &[f64], act: Activation, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|o| {
            let z = b[o] + (0..w.cols()).map(|i| w.get(o, i) * x[i]).sum::<f64>();
            match act {
                Activation::Relu => z.max(0.0),
                Activation::Sigmoid => sig(z),
                Activation::Tanh => z.tanh(),
                Activation::Silu => z * sig(z),
                Activation::Identity => z,
            }
        })
        .collect()
}

/// Infer-mode probability of one unpadded sequence, layer by layer over scalars.
pub fn model_oracle(p: &ModelParams, xs: &[Vec<f64>]) -> f64 {
    let h1 = rnn_final(&p.rnn1, xs);
    let bn = &p.bn;
    let n1: Vec<Vec<f64>> = h1
        .iter()
        .map(|h| {
            (0..h.len())
                .map(|j| bn.gamma[j] * (h[j] - bn.running_mean[j]) / (bn.running_var[j].sqrt() + bn.epsilon) + bn.beta[j])
                .collect()
        })
        .collect();
    let mut cur = rnn_final(&p.rnn2, &n1).pop().unwrap();
    for layer in &p.kan {
        let g = &layer.grid;
        cur = (0..layer.output_dim)
            .map(|q| {
                (0..layer.input_dim)
                    .map(|i| edge_oracle(layer.edge_coeffs(q, i), g.lo, g.hi, g.order, layer.base_weight.get(q, i), cur[i]))
                    .sum()
            })
            .collect();
    }
    let d = dense(&p.dense.weight, &p.dense.bias, Activation::Relu, &cur);
    dense(&p.output.weight, &p.output.bias, Activation::Sigmoid, &d)[0]
}

/// Balanced, standardized `(15, 0, 3)` windows from the synthetic generator.
pub fn synthetic_training_set(n_loans: usize, seed: u64) -> (MaskedBatch, Vec<f64>) {
    use seqkan::data::window::ONE_HOT_COLUMNS;
    use seqkan::data::{build_windows, samples_to_batch, synth_generate, undersample, Standardizer, SynthConfig, WindowSpec};
    let seqs = synth_generate(&SynthConfig { n_loans, seed, ..Default::default() }).unwrap();
    let windows = build_windows(&seqs, WindowSpec::new(15, 0, 3).unwrap()).unwrap();
    let balanced = undersample(&windows, &mut SeededRng::new(seed)).unwrap();
    let st = Standardizer::fit(&balanced, ONE_HOT_COLUMNS).unwrap();
    samples_to_batch(&st.apply(&balanced)).unwrap()
}
