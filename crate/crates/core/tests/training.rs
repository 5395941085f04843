mod common;

use common::*;
use proptest::prelude::*;
use seqkan::layers::model::ModelKind;
use seqkan::layers::{MaskedBatch, Mode, ModelParams, ModelSpec};
use seqkan::tensor::SeededRng;
use seqkan::training::{bce_loss, gradient_check_head, predict, train, write_trace_csv, TrainConfig};

fn grads(p: &ModelParams, batch: &MaskedBatch, labels: &[f64]) -> Vec<f64> {
    let cache = p.forward_cached(batch, Mode::Train, &mut SeededRng::new(0)).unwrap();
    p.backward(&cache, labels).unwrap().flatten()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn no_dropout(kind: ModelKind, dim: usize) -> ModelSpec {
    let mut s = small_spec(kind, dim);
    s.dropout_rate = 0.0;
    s
}

#[test]
fn training_loss_decreases_over_first_epochs() {
    let (batch, labels) = synthetic_training_set(3000, 21);
    let cfg = TrainConfig { epochs: 5, seed: 2, early_stop_patience: 10, ..Default::default() };
    let out = train(&ModelSpec::for_kind(ModelKind::GruKan, batch.dim()), &batch, &labels, &cfg).unwrap();
    let losses: Vec<f64> = out.trace.iter().map(|r| r.train_loss).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_trace_csv(&path, &out.trace).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "epoch,train_loss,val_loss,elapsed_ms");
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn zero_epochs_returns_initialization() {
    let mut rng = SeededRng::new(1);
    let batch = random_batch(&mut rng, 8, 4, 3);
    let labels: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
    let spec = small_spec(ModelKind::LstmKan, 3);
    let cfg = TrainConfig { epochs: 0, seed: 17, ..Default::default() };
    let out = train(&spec, &batch, &labels, &cfg).unwrap();
    assert_eq!(out.params, ModelParams::init(&spec, &mut SeededRng::new(17)).unwrap());
    assert!(out.trace.is_empty());
}

#[test]
fn single_class_data_is_rejected() {
    let mut rng = SeededRng::new(1);
    let batch = random_batch(&mut rng, 6, 4, 3);
    let err = train(&small_spec(ModelKind::Gru, 3), &batch, &[1.0; 6], &TrainConfig::default());
    assert!(err.is_err());
}

#[test]
fn same_seed_gives_identical_model_files() {
    let mut rng = SeededRng::new(2);
    let batch = random_batch(&mut rng, 40, 6, 3);
    let labels: Vec<f64> = (0..40).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let cfg = TrainConfig { epochs: 3, batch_size: 16, seed: 4, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for run in 0..2 {
        let out = train(&small_spec(ModelKind::GruKan, 3), &batch, &labels, &cfg).unwrap();
        let path = dir.path().join(format!("m{run}.json"));
        out.params.save_json(&path).unwrap();
        texts.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn predict_matches_infer_forward() {
    let mut rng = SeededRng::new(3);
    let p = random_model(&small_spec(ModelKind::Lstm, 3), &mut rng);
    let batch = random_batch(&mut rng, 1100, 5, 3);
    let a = predict(&p, &batch).unwrap();
    let b = p.forward(&batch, Mode::Infer, &mut rng).unwrap();
    assert_eq!(a, b);
}

#[test]
fn output_head_gradient() {
    for seed in 0..5 {
        assert!(gradient_check_head(6, 5, seed).unwrap().max_rel_error <= 1e-6);
    }
}

#[test]
fn loss_scalar_loop() {
    let mut rng = SeededRng::new(7);
    let p: Vec<f64> = (0..100).map(|_| rng.uniform_range(1e-6, 1.0 - 1e-6)).collect();
    let y: Vec<f64> = (0..100).map(|_| rng.bernoulli(0.4) as u8 as f64).collect();
    let mut want = 0.0;
    for i in 0..100 {
        want -= y[i] * p[i].ln() + (1.0 - y[i]) * (1.0 - p[i]).ln();
    }
    assert!((bce_loss(&p, &y).unwrap().mean - want / 100.0).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sample_order_does_not_change_gradients(seed in any::<u64>(), kind in 0usize..4) {
        let mut rng = SeededRng::new(seed);
        let p = random_model(&no_dropout(ModelKind::ALL[kind], 3), &mut rng);
        let batch = random_batch(&mut rng, 6, 4, 3);
        let labels: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
        let mut perm: Vec<usize> = (0..6).collect();
        rng.shuffle(&mut perm);
        let permuted_labels: Vec<f64> = perm.iter().map(|&i| labels[i]).collect();
        let a = grads(&p, &batch, &labels);
        let b = grads(&p, &batch.select(&perm), &permuted_labels);
        prop_assert!(max_abs_diff(&a, &b) <= 1e-10);
    }

    #[test]
    fn duplicating_the_batch_keeps_mean_gradient(seed in any::<u64>(), kind in 0usize..4) {
        let mut rng = SeededRng::new(seed);
        let p = random_model(&no_dropout(ModelKind::ALL[kind], 3), &mut rng);
        let batch = random_batch(&mut rng, 5, 4, 3);
        let labels: Vec<f64> = (0..5).map(|i| (i % 2) as f64).collect();
        let twice: Vec<usize> = (0..5).chain(0..5).collect();
        let labels2: Vec<f64> = twice.iter().map(|&i| labels[i]).collect();
        let a = grads(&p, &batch, &labels);
        let b = grads(&p, &batch.select(&twice), &labels2);
        prop_assert!(max_abs_diff(&a, &b) <= 1e-10);
    }

    #[test]
    fn input_seen_only_at_padded_steps_gets_zero_gradient(seed in any::<u64>(), kind in 0usize..4) {
        // feature 0 is zero on every valid step, so its input weights receive no gradient
        let mut rng = SeededRng::new(seed);
        let spec = small_spec(ModelKind::ALL[kind], 3);
        let p = random_model(&spec, &mut rng);
        let seqs: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|_| (0..rng.int_range(1, 4)).map(|_| vec![0.0, rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)]).collect())
            .collect();
        let batch = MaskedBatch::from_sequences_padded(&seqs, 3, 5).unwrap();
        let labels = [1.0, 0.0, 1.0, 0.0];
        let cache = p.forward_cached(&batch, Mode::Train, &mut rng).unwrap();
        let g = p.backward(&cache, &labels).unwrap();
        let col = match &g.rnn1 {
            seqkan::layers::RnnParams::Lstm(l) => l.w.iter().map(|m| (0..m.rows()).map(|r| m.get(r, spec.rnn1_units).abs()).sum::<f64>()).sum::<f64>(),
            seqkan::layers::RnnParams::Gru(gp) => gp.w.iter().map(|m| (0..m.rows()).map(|r| m.get(r, 0).abs()).sum::<f64>()).sum::<f64>(),
        };
        prop_assert_eq!(col, 0.0);
    }

    #[test]
    fn loss_is_non_negative(p in proptest::collection::vec(0.0f64..=1.0, 1..50), seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let y: Vec<f64> = p.iter().map(|_| rng.bernoulli(0.5) as u8 as f64).collect();
        let l = bce_loss(&p, &y).unwrap().mean;
        prop_assert!(l.is_finite() && l >= 0.0);
    }
}
