use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{PointSummary, RunOutput, TrialResult};
use crate::error::{invalid, Result};
use crate::layers::model::ModelKind;
use crate::metrics::MetricsReport;
use crate::tensor::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Maximum over trials.
    pub best: f64,
    /// Sample standard deviation (n − 1); 0 for a single trial.
    pub std: f64,
}

impl MetricStats {
    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.is_empty() {
            return Err(invalid!("no values to aggregate"));
        }
        if v.iter().all(|&x| x == v[0]) {
            // exact, free of summation rounding
            return Ok(Self { mean: v[0], best: v[0], std: 0.0 });
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let std = if v.len() < 2 { 0.0 } else { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
        Ok(Self { mean, best, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub point: String,
    pub x: f64,
    pub model: ModelKind,
    pub trials: usize,
    /// In [`MetricsReport::METRIC_NAMES`] order.
    pub metrics: [MetricStats; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
}

/// Groups rows by (point, model) in order of first appearance.
pub fn aggregate_trials(results: &[TrialResult]) -> Result<AggregateReport> {
    let mut keys: Vec<(String, ModelKind, f64)> = Vec::new();
    for r in results {
        if !keys.iter().any(|(p, m, _)| *p == r.point && *m == r.model) {
            keys.push((r.point.clone(), r.model, r.x));
        }
    }
    let rows = keys
        .into_iter()
        .map(|(point, model, x)| {
            let group: Vec<&MetricsReport> =
                results.iter().filter(|r| r.point == point && r.model == model).map(|r| &r.metrics).collect();
            let mut metrics = [MetricStats { mean: 0.0, best: 0.0, std: 0.0 }; 5];
            for (k, slot) in metrics.iter_mut().enumerate() {
                let v: Vec<f64> = group.iter().map(|m| m.values()[k]).collect();
                *slot = MetricStats::from_values(&v)?;
            }
            Ok(AggregateRow { point, x, model, trials: group.len(), metrics })
        })
        .collect::<Result<_>>()?;
    Ok(AggregateReport { rows })
}

pub const TRIALS_FILE: &str = "trials.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn trials_header() -> Vec<&'static str> {
    let mut h = vec!["point", "x", "model", "trial", "seed"];
    h.extend(MetricsReport::METRIC_NAMES);
    h.extend([
        "tp",
        "fp",
        "tn",
        "fn",
        "precision_undefined",
        "recall_undefined",
        "train_samples",
        "test_samples",
        "epochs",
        "best_epoch",
    ]);
    h
}

pub fn aggregate_header() -> Vec<String> {
    let mut h: Vec<String> = vec!["point".into(), "x".into(), "model".into(), "trials".into()];
    for m in MetricsReport::METRIC_NAMES {
        for s in ["mean", "best", "std"] {
            h.push(format!("{m}_{s}"));
        }
    }
    h
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub library: String,
    pub version: String,
    pub rng: String,
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    pub points: Vec<PointSummary>,
    pub files: Vec<String>,
}

/// Writes per-trial rows, wall-clock timings, the aggregate table, one plot
/// series per metric and the run manifest. Everything except the timings
/// file is a pure function of the config and seeds.
pub fn emit_reports(cfg: &ExperimentConfig, run: &RunOutput, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();

    let path = out_dir.join(TRIALS_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(trials_header())?;
    for r in &run.results {
        let m = &r.metrics;
        let mut row = vec![r.point.clone(), r.x.to_string(), r.model.to_string(), r.trial.to_string(), r.seed.to_string()];
        row.extend(m.values().iter().map(f64::to_string));
        row.extend([m.counts.tp, m.counts.fp, m.counts.tn, m.counts.fn_].iter().map(usize::to_string));
        row.extend([m.precision_undefined.to_string(), m.recall_undefined.to_string()]);
        row.extend([r.train_samples, r.test_samples, r.epochs, r.best_epoch].iter().map(usize::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    files.push(path);

    let path = out_dir.join(TIMINGS_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["point", "model", "trial", "wall_ms"])?;
    for r in &run.results {
        w.write_record([r.point.clone(), r.model.to_string(), r.trial.to_string(), r.wall_ms.to_string()])?;
    }
    w.flush()?;
    files.push(path);

    let agg = aggregate_trials(&run.results)?;
    let path = out_dir.join(AGGREGATE_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(aggregate_header())?;
    for row in &agg.rows {
        let mut rec = vec![row.point.clone(), row.x.to_string(), row.model.to_string(), row.trials.to_string()];
        for s in &row.metrics {
            rec.extend([s.mean.to_string(), s.best.to_string(), s.std.to_string()]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    files.push(path);

    let mut models: Vec<ModelKind> = Vec::new();
    let mut points: Vec<(String, f64)> = Vec::new();
    for row in &agg.rows {
        if !models.contains(&row.model) {
            models.push(row.model);
        }
        if !points.iter().any(|(p, _)| *p == row.point) {
            points.push((row.point.clone(), row.x));
        }
    }
    for (k, metric) in MetricsReport::METRIC_NAMES.iter().enumerate() {
        let path = out_dir.join(format!("plot_{metric}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["point".to_string(), "x".to_string()];
        header.extend(models.iter().map(|m| m.to_string()));
        w.write_record(&header)?;
        for (p, x) in &points {
            let mut rec = vec![p.clone(), x.to_string()];
            for m in &models {
                let v = agg.rows.iter().find(|r| r.point == *p && r.model == *m).map(|r| r.metrics[k].mean.to_string());
                rec.push(v.unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        files.push(path);
    }

    let path = out_dir.join(MANIFEST_FILE);
    let mut names: Vec<String> = files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect();
    names.push(MANIFEST_FILE.into());
    let manifest = Manifest {
        library: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        rng: SeededRng::ALGORITHM.into(),
        scenario: cfg.scenario.name().into(),
        seeds: (0..cfg.trials as u64).map(|t| cfg.base_seed + t).collect(),
        config: cfg.clone(),
        points: run.points.clone(),
        files: names,
    };
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    files.push(path);
    Ok(files)
}
