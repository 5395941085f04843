//! Accuracy, precision, recall, F1 and ROC AUC.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

/// Scores at or above the threshold are predicted positive.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(shape_err!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(invalid!("no scores"));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(invalid!("labels must be 0 or 1"));
    }
    Ok(())
}

pub fn confusion_at_threshold(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_inputs(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Threshold metrics. Undefined precision or recall is reported as 0 with
/// the matching flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

pub fn compute_metrics(c: &ConfusionCounts) -> Result<ClassificationMetrics> {
    let n = c.total();
    if n == 0 {
        return Err(invalid!("metrics of an empty confusion table"));
    }
    let ratio = |num: usize, den: usize| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(ClassificationMetrics {
        accuracy: (c.tp + c.tn) as f64 / n as f64,
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
    })
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counted as one half. Uses midranks, O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid!("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(invalid!("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of twice the midranks of positives keeps everything in integers
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank2_sum += pos_in_group * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    // U2 = 2·(R − p(p+1)/2) = rank2_sum − p(p+1), the doubled pair count
    let u2 = rank2_sum - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

impl MetricsReport {
    pub const METRIC_NAMES: [&'static str; 5] = ["accuracy", "precision", "recall", "f1", "auc"];

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.f1, self.auc]
    }
}

pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    let counts = confusion_at_threshold(scores, labels, threshold)?;
    let m = compute_metrics(&counts)?;
    Ok(MetricsReport {
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        auc: auc(scores, labels)?,
        threshold,
        counts,
        precision_undefined: m.precision_undefined,
        recall_undefined: m.recall_undefined,
    })
}
