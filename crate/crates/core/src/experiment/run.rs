use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BudgetUnit, DataSource, ExperimentConfig, Scenario, DEFAULT_COHORT_RECORDS};
use crate::data::records::PerformanceReader;
use crate::data::{
    assemble_sequences, build_windows, samples_to_batch, standardize, synth_generate, synth_records, undersample, ColumnMap,
    DatasetSplit, LoanSequence, Sample, SynthConfig, WindowSpec, FEATURE_DIM,
};
use crate::error::{Error, Result};
use crate::layers::model::ModelKind;
use crate::layers::ModelSpec;
use crate::metrics::{evaluate, MetricsReport};
use crate::tensor::SeededRng;
use crate::training::{predict, train, TrainConfig};

/// Windows for one sweep point, before per-trial balancing.
#[derive(Debug, Clone)]
pub struct PointData {
    pub label: String,
    /// Plot abscissa.
    pub x: f64,
    pub window: WindowSpec,
    pub train_cohort: u16,
    pub test_cohort: u16,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl PointData {
    pub fn summary(&self) -> PointSummary {
        let pos = |s: &[Sample]| s.iter().filter(|x| x.label == 1).count();
        PointSummary {
            point: self.label.clone(),
            x: self.x,
            window: self.window,
            train_cohort: self.train_cohort,
            test_cohort: self.test_cohort,
            train_windows: self.train.len(),
            train_defaults: pos(&self.train),
            test_windows: self.test.len(),
            test_defaults: pos(&self.test),
            train_fingerprint: fingerprint(&self.train),
            test_fingerprint: fingerprint(&self.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub point: String,
    pub x: f64,
    pub window: WindowSpec,
    pub train_cohort: u16,
    pub test_cohort: u16,
    pub train_windows: usize,
    pub train_defaults: usize,
    pub test_windows: usize,
    pub test_defaults: usize,
    pub train_fingerprint: String,
    pub test_fingerprint: String,
}

/// SHA-256 over ids, cohorts, labels, masks and feature bits.
pub fn fingerprint(samples: &[Sample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.loan_id.as_bytes());
        h.update(s.cohort_year.to_le_bytes());
        h.update([s.label]);
        h.update((s.valid_len() as u32).to_le_bytes());
        for v in s.features.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub point: String,
    pub x: f64,
    pub model: ModelKind,
    pub trial: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub points: Vec<PointSummary>,
    pub results: Vec<TrialResult>,
}

/// Loads and caches cohort histories.
struct CohortLoader<'a> {
    cfg: &'a ExperimentConfig,
    cache: HashMap<(u16, Option<usize>), Vec<LoanSequence>>,
}

impl<'a> CohortLoader<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Self { cfg, cache: HashMap::new() }
    }

    fn load(&mut self, year: u16, budget: Option<usize>) -> Result<&[LoanSequence]> {
        if !self.cache.contains_key(&(year, budget)) {
            let seqs = load_cohort(self.cfg, year, budget)?;
            self.cache.insert((year, budget), seqs);
        }
        Ok(&self.cache[&(year, budget)])
    }
}

/// Generator settings standing in for origination year `year`.
pub fn synthetic_cohort(generator: &SynthConfig, drift_per_year: f64, year: u16) -> SynthConfig {
    SynthConfig {
        cohort_year: year,
        drift: generator.drift + (year as f64 - generator.cohort_year as f64) * drift_per_year,
        seed: generator.seed.wrapping_add(year as u64),
        ..generator.clone()
    }
}

fn load_cohort(cfg: &ExperimentConfig, year: u16, budget: Option<usize>) -> Result<Vec<LoanSequence>> {
    match &cfg.data {
        DataSource::Synthetic { generator, drift_per_year } => {
            let seqs = synth_generate(&synthetic_cohort(generator, *drift_per_year, year))?;
            match budget {
                None => Ok(seqs),
                Some(n) => {
                    let records: Vec<_> = synth_records(&seqs).into_iter().take(n).collect();
                    assemble_sequences(records, cfg.assemble)
                }
            }
        }
        DataSource::Freddie { cohorts, column_map } => {
            let paths = cohorts.get(&year).ok_or_else(|| Error::Data(format!("missing cohort data for {year}")))?;
            let map = match column_map {
                Some(p) => ColumnMap::load(p)?,
                None => ColumnMap::default(),
            };
            let mut records = Vec::new();
            for path in paths {
                let remaining = budget.map(|b| b.saturating_sub(records.len()));
                if remaining == Some(0) {
                    break;
                }
                let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
                let mut reader = PerformanceReader::new(BufReader::new(file), map.clone()).with_limit(remaining);
                for r in reader.by_ref() {
                    records.push(r?);
                }
                let report = reader.report();
                if report.skipped > 0 {
                    log::warn!("{}: skipped {} of {} lines", path.display(), report.skipped, report.lines);
                }
            }
            assemble_sequences(records, cfg.assemble)
        }
    }
}

fn check_trainable(label: &str, samples: &[Sample], side: &str) -> Result<()> {
    let pos = samples.iter().filter(|s| s.label == 1).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg < pos {
        return Err(Error::Data(format!(
            "point {label}: {} eligible {side} windows with {pos} defaults; need at least one default and as many non-defaults",
            samples.len()
        )));
    }
    Ok(())
}

/// Builds the windows of every sweep point of `cfg.scenario`.
pub fn prepare_points(cfg: &ExperimentConfig) -> Result<Vec<PointData>> {
    cfg.validate()?;
    let mut loader = CohortLoader::new(cfg);
    let y = cfg.obs_len;
    let budget = cfg.record_budget;
    let mut points = Vec::new();
    let mut add = |loader: &mut CohortLoader,
                   label: String,
                   x: f64,
                   window: WindowSpec,
                   (train_year, train_budget, window_cap): (u16, Option<usize>, Option<usize>),
                   (test_year, test_budget): (u16, Option<usize>)|
     -> Result<()> {
        let mut train = build_windows(loader.load(train_year, train_budget)?, window)?;
        if let Some(cap) = window_cap {
            train.truncate(cap);
        }
        let test = build_windows(loader.load(test_year, test_budget)?, window)?;
        check_trainable(&label, &train, "training")?;
        check_trainable(&label, &test, "test")?;
        let train_years: BTreeSet<u16> = train.iter().map(|s| s.cohort_year).collect();
        if test.iter().any(|s| train_years.contains(&s.cohort_year)) {
            return Err(Error::Data(format!("point {label}: out-of-time violation, test windows share a cohort with training")));
        }
        points.push(PointData { label, x, window, train_cohort: train_year, test_cohort: test_year, train, test });
        Ok(())
    };
    let (tr, te) = (cfg.train_cohort, cfg.test_cohort);
    match cfg.scenario {
        Scenario::WindowSweep => {
            for x in cfg.sweep_values() {
                // plotted against the total span of features plus observation
                add(&mut loader, x.to_string(), (x + y) as f64, WindowSpec::new(x, 0, y)?, (tr, budget, None), (te, budget))?;
            }
        }
        Scenario::IntervalSweep => {
            for g in cfg.sweep_values() {
                let w = WindowSpec::new(cfg.interval_total - g, g, y)?;
                add(&mut loader, g.to_string(), g as f64, w, (tr, budget, None), (te, budget))?;
            }
        }
        Scenario::SampleSizeSweep => {
            let w = cfg.window.unwrap_or(WindowSpec { feature_len: 15, gap: 0, obs_len: y });
            for n in cfg.sweep_values() {
                let train_side = match cfg.budget_unit() {
                    BudgetUnit::Records => (tr, Some(n), None),
                    BudgetUnit::Windows => (tr, budget, Some(n)),
                };
                add(&mut loader, n.to_string(), n as f64, w, train_side, (te, budget))?;
            }
        }
        Scenario::CohortGeneralization => {
            let w = cfg.window.unwrap_or(WindowSpec { feature_len: 15, gap: 3, obs_len: y });
            let b = budget.or((!cfg.is_synthetic()).then_some(DEFAULT_COHORT_RECORDS));
            for (i, (a, t)) in cfg.pairs().into_iter().enumerate() {
                add(&mut loader, format!("{a}→{t}"), i as f64, w, (a, b, None), (t, b))?;
            }
        }
        Scenario::Single => {
            let w = cfg.window.unwrap_or(WindowSpec { feature_len: 15, gap: 0, obs_len: y });
            let label = format!("{}-{}-{}", w.feature_len, w.gap, w.obs_len);
            add(&mut loader, label, w.total() as f64, w, (tr, budget, None), (te, budget))?;
        }
    }
    Ok(points)
}

const TRAIN_SAMPLE_STREAM: u64 = 11;
const TEST_SAMPLE_STREAM: u64 = 12;

pub fn model_spec(cfg: &ExperimentConfig, kind: ModelKind) -> ModelSpec {
    let base = ModelSpec::for_kind(kind, FEATURE_DIM);
    ModelSpec { cell_kind: base.cell_kind, use_kan: base.use_kan, input_dim: FEATURE_DIM, ..cfg.model.clone() }
}

/// One (point, model, trial) cell. Depends only on its arguments, so any
/// cell can be recomputed in isolation.
pub fn run_trial(cfg: &ExperimentConfig, point: &PointData, model: ModelKind, trial: usize) -> Result<TrialResult> {
    let start = Instant::now();
    let seed = cfg.base_seed + trial as u64;
    let root = SeededRng::new(seed);
    let train_set = undersample(&point.train, &mut root.derive(TRAIN_SAMPLE_STREAM))?;
    let test_set = undersample(&point.test, &mut root.derive(TEST_SAMPLE_STREAM))?;
    let split = standardize(DatasetSplit { train: train_set, test: test_set, standardization: None })?;
    let (xb, yb) = samples_to_batch(&split.train)?;
    let (tb, _) = samples_to_batch(&split.test)?;
    let tc = TrainConfig { seed, init_seed: cfg.freeze_init.then_some(cfg.base_seed), ..cfg.train.clone() };
    let outcome = train(&model_spec(cfg, model), &xb, &yb, &tc)?;
    let scores = predict(&outcome.params, &tb)?;
    let labels: Vec<u8> = split.test.iter().map(|s| s.label).collect();
    let metrics = evaluate(&scores, &labels, cfg.threshold)?;
    Ok(TrialResult {
        point: point.label.clone(),
        x: point.x,
        model,
        trial,
        seed,
        metrics,
        train_samples: split.train.len(),
        test_samples: split.test.len(),
        epochs: outcome.trace.len(),
        best_epoch: outcome.best_epoch,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Runs every (point, model, trial) cell, in parallel when enabled. Rows
/// come back ordered by point, model, trial.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let points = prepare_points(cfg)?;
    let mut jobs = Vec::new();
    for (p, _) in points.iter().enumerate() {
        for &m in &cfg.models {
            for t in 0..cfg.trials {
                jobs.push((p, m, t));
            }
        }
    }
    log::info!("{}: {} points, {} trial runs", cfg.scenario.name(), points.len(), jobs.len());
    let run = |&(p, m, t): &(usize, ModelKind, usize)| {
        let r = run_trial(cfg, &points[p], m, t);
        if let Ok(r) = &r {
            log::debug!("point {} {} trial {}: auc {:.4}", r.point, r.model, t, r.metrics.auc);
        }
        r
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<TrialResult>> = jobs.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<TrialResult>> = jobs.iter().map(run).collect();
    Ok(RunOutput { points: points.iter().map(PointData::summary).collect(), results: results.into_iter().collect::<Result<_>>()? })
}

fn with_scenario(cfg: &ExperimentConfig, scenario: Scenario) -> ExperimentConfig {
    ExperimentConfig { scenario, ..cfg.clone() }
}

pub fn run_window_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment(&with_scenario(cfg, Scenario::WindowSweep))
}

pub fn run_interval_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment(&with_scenario(cfg, Scenario::IntervalSweep))
}

pub fn run_sample_size_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment(&with_scenario(cfg, Scenario::SampleSizeSweep))
}

pub fn run_cohort_generalization(cfg: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment(&with_scenario(cfg, Scenario::CohortGeneralization))
}
