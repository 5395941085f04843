//! Feature engineering, observation-window labels and fixed-length samples.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use super::records::Clds;
use super::sequence::LoanSequence;
use crate::error::{invalid, shape_err, Result};
use crate::layers::MaskedBatch;
use crate::tensor::Matrix;

/// Assistance status codes with their own one-hot column; anything else,
/// including a blank field, falls into the leading "none" column.
pub const ASSISTANCE_CODES: [&str; 3] = ["F", "R", "T"];

pub const FEATURE_NAMES: [&str; 9] = [
    "assistance_none",
    "assistance_F",
    "assistance_R",
    "assistance_T",
    "current_actual_upb",
    "current_deferred_upb",
    "current_interest_rate",
    "estimated_ltv",
    "interest_bearing_upb_delta",
];

pub const FEATURE_DIM: usize = FEATURE_NAMES.len();

/// Columns excluded from standardization.
pub const ONE_HOT_COLUMNS: usize = 1 + ASSISTANCE_CODES.len();

/// Delinquency status (months past due) at which a month counts as default.
pub const DEFAULT_CLDS: u32 = 3;

static UNKNOWN_CODE_WARNED: AtomicBool = AtomicBool::new(false);

fn assistance_column(code: Option<&str>) -> usize {
    match code {
        None => 0,
        Some(c) => match ASSISTANCE_CODES.iter().position(|k| *k == c) {
            Some(i) => i + 1,
            None => {
                if !UNKNOWN_CODE_WARNED.swap(true, Ordering::Relaxed) {
                    log::warn!("unknown assistance status code '{c}' mapped to none");
                }
                0
            }
        },
    }
}

/// Per-month feature rows (see [`FEATURE_NAMES`]). The interest-bearing
/// balance enters only through its first difference, zero in the first
/// month. A missing interest-bearing balance falls back to actual minus
/// deferred; missing LTV estimates are carried forward (or back from the
/// first known value).
pub fn engineer_features(seq: &LoanSequence) -> Matrix {
    let n = seq.months.len();
    let mut out = Matrix::zeros(n, FEATURE_DIM);
    let first_ltv = seq.months.iter().find_map(|m| m.estimated_ltv).unwrap_or(0.0);
    let mut ltv = first_ltv;
    let mut prev_ib = None;
    for (t, m) in seq.months.iter().enumerate() {
        let row = out.row_mut(t);
        row[assistance_column(m.assistance_status_code.as_deref())] = 1.0;
        row[4] = m.current_actual_upb;
        row[5] = m.current_deferred_upb;
        row[6] = m.current_interest_rate;
        if let Some(v) = m.estimated_ltv {
            ltv = v;
        }
        row[7] = ltv;
        let ib = m.interest_bearing_upb.unwrap_or(m.current_actual_upb - m.current_deferred_upb);
        row[8] = prev_ib.map_or(0.0, |p| ib - p);
        prev_ib = Some(ib);
    }
    out
}

/// Whether a month's delinquency status counts as default.
pub fn is_default_status(clds: &Clds, non_numeric_is_default: bool) -> bool {
    match clds {
        Clds::Months(n) => *n >= DEFAULT_CLDS,
        Clds::Code(_) => non_numeric_is_default,
    }
}

/// 1 if any month in `[obs_start, obs_start + y)` is in default, else 0.
/// Non-numeric disposition codes count as default.
pub fn label_window(seq: &LoanSequence, obs_start: usize, y: usize) -> Result<u8> {
    label_window_with(seq, obs_start, y, true)
}

pub fn label_window_with(seq: &LoanSequence, obs_start: usize, y: usize, non_numeric_is_default: bool) -> Result<u8> {
    let end = obs_start + y;
    if y == 0 || end > seq.len() {
        return Err(invalid!("observation window [{obs_start}, {end}) outside a {}-month sequence", seq.len()));
    }
    Ok(seq.months[obs_start..end].iter().any(|m| is_default_status(&m.clds, non_numeric_is_default)) as u8)
}

/// Feature window length `x`, gap `g` and observation length `y`, in months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    pub feature_len: usize,
    pub gap: usize,
    pub obs_len: usize,
}

impl WindowSpec {
    pub fn new(feature_len: usize, gap: usize, obs_len: usize) -> Result<Self> {
        let s = Self { feature_len, gap, obs_len };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_len == 0 || self.obs_len == 0 {
            return Err(invalid!("window needs feature and observation lengths ≥ 1, got {self:?}"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.feature_len + self.gap + self.obs_len
    }

    pub fn obs_start(&self) -> usize {
        self.feature_len + self.gap
    }
}

/// One windowed, labeled loan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// `time × FEATURE_DIM`; rows past the valid length are zero.
    pub features: Matrix,
    pub mask: Vec<bool>,
    pub label: u8,
    pub loan_id: String,
    pub cohort_year: u16,
}

impl Sample {
    pub fn time(&self) -> usize {
        self.mask.len()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }
}

/// Drops sequences shorter than `spec.total()`, keeps the earliest
/// `spec.total()` months of the rest, takes features from `[0, x)` and the
/// label from `[x + g, x + g + y)`.
pub fn build_windows(seqs: &[LoanSequence], spec: WindowSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let total = spec.total();
    let mut out = Vec::new();
    for seq in seqs.iter().filter(|s| s.len() >= total) {
        let head = LoanSequence { loan_id: seq.loan_id.clone(), cohort_year: seq.cohort_year, months: seq.months[..total].to_vec() };
        let feats = engineer_features(&head);
        let features = Matrix::from_vec(spec.feature_len, FEATURE_DIM, feats.as_slice()[..spec.feature_len * FEATURE_DIM].to_vec())?;
        out.push(Sample {
            features,
            mask: vec![true; spec.feature_len],
            label: label_window(&head, spec.obs_start(), spec.obs_len)?,
            loan_id: seq.loan_id.clone(),
            cohort_year: seq.cohort_year,
        });
    }
    Ok(out)
}

/// Extends every sample with zero rows and a false mask up to `target_len`.
pub fn pad_and_mask(samples: &[Sample], target_len: usize) -> Result<Vec<Sample>> {
    samples
        .iter()
        .map(|s| {
            if s.time() > target_len {
                return Err(shape_err!("sample {} has {} steps, target is {target_len}", s.loan_id, s.time()));
            }
            let dim = s.features.cols();
            let mut data = s.features.as_slice().to_vec();
            data.resize(target_len * dim, 0.0);
            let mut mask = s.mask.clone();
            mask.resize(target_len, false);
            Ok(Sample { features: Matrix::from_vec(target_len, dim, data)?, mask, ..s.clone() })
        })
        .collect()
}

/// Stacks samples into a masked batch (padding to the longest) plus labels.
pub fn samples_to_batch(samples: &[Sample]) -> Result<(MaskedBatch, Vec<f64>)> {
    let first = samples.first().ok_or_else(|| invalid!("no samples"))?;
    let dim = first.features.cols();
    let time = samples.iter().map(Sample::time).max().expect("non-empty");
    let padded = pad_and_mask(samples, time)?;
    let mut features = Vec::with_capacity(samples.len() * time * dim);
    let mut mask = Vec::with_capacity(samples.len() * time);
    for s in &padded {
        if s.features.cols() != dim {
            return Err(shape_err!("sample {} has {} features, expected {dim}", s.loan_id, s.features.cols()));
        }
        features.extend_from_slice(s.features.as_slice());
        mask.extend_from_slice(&s.mask);
    }
    let batch = MaskedBatch::new(samples.len(), time, dim, features, mask)?;
    Ok((batch, samples.iter().map(|s| s.label as f64).collect()))
}
