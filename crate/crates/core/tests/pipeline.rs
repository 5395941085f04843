mod common;

use proptest::prelude::*;
use seqkan::data::window::{label_window, ONE_HOT_COLUMNS};
use seqkan::data::{
    assemble_sequences, build_windows, parse_performance_file, read_samples, standardize, synth_generate,
    undersample, write_performance_file, write_samples, AssembleOptions, Clds, ColumnMap, DatasetSplit,
    LoanMonthRecord, LoanSequence, Sample, Standardizer, SynthConfig, WindowSpec, YearMonth, FEATURE_DIM,
    FEATURE_NAMES,
};
use seqkan::metrics::auc;
use seqkan::tensor::{Matrix, SeededRng};

const RATE_COLUMN: usize = 6;

fn month(id: &str, t: usize, clds: u32) -> LoanMonthRecord {
    LoanMonthRecord {
        loan_id: id.into(),
        period: YearMonth::new(2019, 2).unwrap().plus_months(t as i64),
        clds: Clds::Months(clds),
        current_actual_upb: 200_000.0 - 500.0 * t as f64,
        current_deferred_upb: 0.0,
        // the month index doubles as a marker in the rate column
        current_interest_rate: t as f64,
        estimated_ltv: Some(80.0),
        interest_bearing_upb: Some(200_000.0 - 500.0 * t as f64),
        assistance_status_code: None,
        remaining_months_to_maturity: 360 - t as i32,
    }
}

fn loan(id: &str, clds: &[u32]) -> LoanSequence {
    LoanSequence { loan_id: id.into(), cohort_year: 2019, months: clds.iter().enumerate().map(|(t, &c)| month(id, t, c)).collect() }
}

#[test]
fn file_to_windows_round_trip() {
    let map = ColumnMap::default();
    let mut records: Vec<LoanMonthRecord> = Vec::new();
    let mut a = [0; 20];
    a[17] = 3;
    let b = vec![0, 0, 1, 2, 2, 2, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 2, 0];
    for t in 0..20 {
        records.push(month("F19Q1000000A", t, a[t]));
        records.push(month("F19Q1000000B", t, b[t]));
    }
    records.reverse();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("perf.txt");
    write_performance_file(&path, &map, &records).unwrap();
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("F19Q1000000C|201902|12\n");
    std::fs::write(&path, text).unwrap();

    let (parsed, report) = parse_performance_file(&path, &map, None).unwrap();
    assert_eq!((report.parsed, report.skipped), (40, 1));
    let seqs = assemble_sequences(parsed, AssembleOptions::default()).unwrap();
    assert_eq!(seqs.len(), 2);
    for s in &seqs {
        assert!(s.months.windows(2).all(|w| w[0].period.index() + 1 == w[1].period.index()));
        assert_eq!(s.cohort_year, 2019);
    }
    let w = build_windows(&seqs, WindowSpec::new(15, 0, 3).unwrap()).unwrap();
    let labels: Vec<(String, u8)> = w.iter().map(|s| (s.loan_id.clone(), s.label)).collect();
    // CLDS 2 through the observation window is still a non-default
    assert_eq!(labels, vec![("F19Q1000000B".to_string(), 0), ("F19Q1000000A".to_string(), 1)]);
}

#[test]
fn status_threshold_labels() {
    let cases: [(&[u32], u8); 4] = [(&[0, 1, 2], 0), (&[0, 3, 0], 1), (&[2, 2, 2], 0), (&[0, 0, 7], 1)];
    for (clds, want) in cases {
        assert_eq!(label_window(&loan("L", clds), 0, 3).unwrap(), want, "{clds:?}");
    }
}

#[test]
fn interval_windows_follow_fixed_span_arithmetic() {
    for g in 3..=8 {
        let x = 21 - g;
        let spec = WindowSpec::new(x, g, 3).unwrap();
        assert_eq!(spec.total(), 24);
        for (hit, want) in [(x + g - 1, 0), (x + g, 1), (x + g + 2, 1), (x + g + 3, 0), (x - 1, 0)] {
            let mut clds = vec![0; 26];
            clds[hit] = 3;
            let w = build_windows(&[loan("L", &clds)], spec).unwrap();
            assert_eq!(w[0].label, want, "g={g} default at month {hit}");
            let rates: Vec<f64> = (0..w[0].time()).map(|t| w[0].features.get(t, RATE_COLUMN)).collect();
            assert_eq!(rates, (0..x).map(|t| t as f64).collect::<Vec<_>>());
        }
    }
    // 24-month loan at (15, 3, 3): features from months 1-15, label from 19-21
    let mut clds = vec![0; 24];
    clds[21] = 3;
    let w = build_windows(&[loan("L", &clds)], WindowSpec::new(15, 3, 3).unwrap()).unwrap();
    assert_eq!((w[0].time(), w[0].label), (15, 0));
    assert!(build_windows(&[loan("L", &[0; 20])], WindowSpec::new(15, 3, 3).unwrap()).unwrap().is_empty());
}

#[test]
fn labels_ignore_feature_values() {
    let mut rng = SeededRng::new(2);
    let mut clds = vec![0; 21];
    clds[19] = 4;
    let base = loan("L", &clds);
    let spec = WindowSpec::new(15, 3, 3).unwrap();
    let want = build_windows(std::slice::from_ref(&base), spec).unwrap()[0].label;
    for _ in 0..20 {
        let mut s = base.clone();
        let mut upb: Vec<f64> = s.months.iter().map(|m| m.current_actual_upb).collect();
        rng.shuffle(&mut upb);
        for (m, u) in s.months.iter_mut().zip(upb) {
            m.current_actual_upb = u;
            m.interest_bearing_upb = Some(u * rng.uniform());
            m.current_interest_rate = rng.uniform_range(2.0, 8.0);
        }
        assert_eq!(build_windows(&[s], spec).unwrap()[0].label, want);
    }
}

fn labeled(n_pos: usize, n_neg: usize) -> Vec<Sample> {
    (0..n_pos + n_neg)
        .map(|i| Sample {
            features: Matrix::from_vec(1, FEATURE_DIM, vec![i as f64; FEATURE_DIM]).unwrap(),
            mask: vec![true],
            label: (i < n_pos) as u8,
            loan_id: format!("L{i}"),
            cohort_year: 2019,
        })
        .collect()
}

#[test]
fn undersampling_fixtures() {
    let out = undersample(&labeled(3, 10), &mut SeededRng::new(1)).unwrap();
    assert_eq!(out.len(), 6);
    assert_eq!(out.iter().filter(|s| s.label == 1).count(), 3);
    let even = labeled(4, 4);
    assert_eq!(undersample(&even, &mut SeededRng::new(1)).unwrap(), even);
    assert!(undersample(&labeled(5, 4), &mut SeededRng::new(1)).is_err());

    let data = labeled(3, 1000);
    let ids = |seed| {
        let out = undersample(&data, &mut SeededRng::new(seed)).unwrap();
        let (pos, neg): (Vec<_>, Vec<_>) = out.into_iter().partition(|s| s.label == 1);
        (pos.into_iter().map(|s| s.loan_id).collect::<Vec<_>>(), neg.into_iter().map(|s| s.loan_id).collect::<Vec<_>>())
    };
    let (p1, n1) = ids(1);
    let (p2, n2) = ids(2);
    assert_eq!(p1, p2);
    assert_ne!(n1, n2);
}

#[test]
fn standardization_fixtures() {
    let mut train = labeled(1, 1);
    for (i, s) in train.iter_mut().enumerate() {
        let v = [2.0, 4.0][i];
        s.features = Matrix::from_vec(1, FEATURE_DIM, vec![v; FEATURE_DIM]).unwrap();
        s.features.set(0, FEATURE_DIM - 1, 5.0);
    }
    let st = Standardizer::fit(&train, ONE_HOT_COLUMNS).unwrap();
    let out = st.apply(&train);
    assert_eq!(out[0].features.row(0)[..ONE_HOT_COLUMNS], [2.0; ONE_HOT_COLUMNS]);
    assert_eq!((out[0].features.get(0, 5), out[1].features.get(0, 5)), (-1.0, 1.0));
    assert_eq!(out[1].features.get(0, FEATURE_DIM - 1), 0.0);
}

#[test]
fn synthetic_signal_strength_controls_separability() {
    let windows = |signal: f64, n: usize| {
        let seqs = synth_generate(&SynthConfig { n_loans: n, signal_strength: signal, seed: 5, ..Default::default() }).unwrap();
        build_windows(&seqs, WindowSpec::new(15, 0, 3).unwrap()).unwrap()
    };
    let mean_delta = |w: &[Sample]| -> f64 {
        let s: Vec<f64> = w.iter().map(|s| (12..15).map(|t| s.features.get(t, FEATURE_DIM - 1)).sum::<f64>() / 3.0).collect();
        let l: Vec<u8> = w.iter().map(|s| s.label).collect();
        auc(&s, &l).unwrap()
    };
    let strong = windows(1.0, 2000);
    assert!(mean_delta(&strong) >= 0.85, "{}", mean_delta(&strong));

    let flat = windows(0.0, 20_000);
    assert!((mean_delta(&flat) - 0.5).abs() <= 0.05);
    let probe = logistic_probe_auc(&flat);
    assert!((probe - 0.5).abs() <= 0.05, "probe AUC {probe}");
    assert!(logistic_probe_auc(&strong) > 0.85);
}

/// Logistic regression on per-column window means and last-three-month means,
/// fitted on even-indexed windows and scored on the odd ones.
fn logistic_probe_auc(w: &[Sample]) -> f64 {
    let summary = |s: &Sample| -> Vec<f64> {
        let t = s.time();
        let mut f: Vec<f64> = (0..FEATURE_DIM).map(|k| (0..t).map(|r| s.features.get(r, k)).sum::<f64>() / t as f64).collect();
        f.extend((0..FEATURE_DIM).map(|k| (t - 3..t).map(|r| s.features.get(r, k)).sum::<f64>() / 3.0));
        f.push(1.0);
        f
    };
    let rows: Vec<Vec<f64>> = w.iter().map(summary).collect();
    let d = rows[0].len();
    let (mut mu, mut sd) = (vec![0.0; d], vec![0.0; d]);
    for r in &rows {
        r.iter().enumerate().for_each(|(k, v)| mu[k] += v / rows.len() as f64);
    }
    for r in &rows {
        r.iter().enumerate().for_each(|(k, v)| sd[k] += (v - mu[k]).powi(2) / rows.len() as f64);
    }
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().enumerate().map(|(k, v)| if sd[k] > 0.0 { (v - mu[k]) / sd[k].sqrt() } else { 1.0 }).collect())
        .collect();
    let mut beta = vec![0.0; d];
    let train: Vec<usize> = (0..z.len()).step_by(2).collect();
    for _ in 0..300 {
        let mut g = vec![0.0; d];
        for &i in &train {
            let p = common::sig(z[i].iter().zip(&beta).map(|(a, b)| a * b).sum());
            z[i].iter().enumerate().for_each(|(k, v)| g[k] += (p - w[i].label as f64) * v / train.len() as f64);
        }
        beta.iter_mut().zip(&g).for_each(|(b, g)| *b -= 0.5 * g);
    }
    let test: Vec<usize> = (1..z.len()).step_by(2).collect();
    let s: Vec<f64> = test.iter().map(|&i| z[i].iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
    let l: Vec<u8> = test.iter().map(|&i| w[i].label).collect();
    auc(&s, &l).unwrap()
}

fn sample_strategy() -> impl Strategy<Value = Vec<Sample>> {
    proptest::collection::vec((1usize..6, 0u8..=1, any::<u64>(), 2015u16..2025), 1..12).prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (len, label, seed, year))| {
                let mut rng = SeededRng::new(seed);
                let mut data: Vec<f64> = (0..len * FEATURE_DIM).map(|_| rng.normal(0.0, 1e5)).collect();
                data[0] = f64::MIN_POSITIVE;
                let s = Sample {
                    features: Matrix::from_vec(len, FEATURE_DIM, data).unwrap(),
                    mask: vec![true; len],
                    label,
                    loan_id: format!("loan-{i}-é"),
                    cohort_year: year,
                };
                seqkan::data::window::pad_and_mask(&[s], 6).unwrap().remove(0)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn samples_file_round_trip(samples in sample_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let st = Standardizer { mean: vec![0.5; FEATURE_DIM], scale: vec![2.0; FEATURE_DIM] };
        let window = WindowSpec::new(6, 0, 3).unwrap();
        write_samples(&path, &samples, Some(window), &FEATURE_NAMES, Some(&st)).unwrap();
        let (back, side) = read_samples(&path).unwrap();
        prop_assert_eq!(side.samples, samples.len());
        prop_assert_eq!(side.window, Some(window));
        prop_assert_eq!(side.standardization, Some(st));
        prop_assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            prop_assert_eq!(&a.mask, &b.mask);
            prop_assert_eq!((&a.loan_id, a.label, a.cohort_year), (&b.loan_id, b.label, b.cohort_year));
            let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.features), bits(&b.features));
        }
    }

    #[test]
    fn undersampled_output_is_exactly_balanced(n_pos in 0usize..40, extra in 0usize..80, seed in any::<u64>()) {
        let data = labeled(n_pos, n_pos + extra);
        let out = undersample(&data, &mut SeededRng::new(seed)).unwrap();
        let pos = out.iter().filter(|s| s.label == 1).count();
        prop_assert_eq!(pos, n_pos);
        prop_assert_eq!(out.len(), 2 * n_pos);
        let kept: std::collections::HashSet<&str> = out.iter().map(|s| s.loan_id.as_str()).collect();
        prop_assert!(data.iter().filter(|s| s.label == 1).all(|s| kept.contains(s.loan_id.as_str())));
    }

    #[test]
    fn test_data_never_reaches_the_standardizer(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let mut make = |n: usize| -> Vec<Sample> {
            let mut v = labeled(n / 2, n - n / 2);
            for s in &mut v {
                s.features.as_mut_slice().iter_mut().for_each(|x| *x = rng.normal(3.0, 2.0));
            }
            v
        };
        let train = make(10);
        let a = standardize(DatasetSplit { train: train.clone(), test: make(7), standardization: None }).unwrap();
        let b = standardize(DatasetSplit { train: train.clone(), test: make(3), standardization: None }).unwrap();
        prop_assert_eq!(&a.standardization, &b.standardization);
        prop_assert_eq!(&a.train, &b.train);
        let st = a.standardization.unwrap();
        prop_assert_eq!(st, Standardizer::fit(&train, ONE_HOT_COLUMNS).unwrap());
    }
}
