use serde::{Deserialize, Serialize};

use super::window::{Sample, ONE_HOT_COLUMNS};
use crate::error::{invalid, Result};
use crate::tensor::SeededRng;

/// Keeps every default and an equal-sized random subset of non-defaults,
/// preserving input order.
pub fn undersample(samples: &[Sample], rng: &mut SeededRng) -> Result<Vec<Sample>> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| samples[i].label == 1);
    if neg.len() < pos.len() {
        return Err(invalid!("{} defaults but only {} non-defaults", pos.len(), neg.len()));
    }
    let mut keep = vec![false; samples.len()];
    pos.iter().for_each(|&i| keep[i] = true);
    for j in rng.sample_indices(neg.len(), pos.len()) {
        keep[neg[j]] = true;
    }
    Ok(samples.iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s.clone()).collect())
}

/// Per-feature affine transform fitted on unmasked training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for untouched or constant columns.
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// One-hot columns keep mean 0 and scale 1; constant columns are only centered.
    pub fn fit(samples: &[Sample], skip_columns: usize) -> Result<Self> {
        let dim = samples.first().ok_or_else(|| invalid!("cannot fit a standardizer on no samples"))?.features.cols();
        let mut sum = vec![0.0; dim];
        let mut count = 0usize;
        for s in samples {
            for t in 0..s.valid_len() {
                sum.iter_mut().zip(s.features.row(t)).for_each(|(a, v)| *a += v);
                count += 1;
            }
        }
        if count == 0 {
            return Err(invalid!("no unmasked rows to standardize"));
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
        let mut sq = vec![0.0; dim];
        for s in samples {
            for t in 0..s.valid_len() {
                for (k, v) in s.features.row(t).iter().enumerate() {
                    sq[k] += (v - mean[k]).powi(2);
                }
            }
        }
        let mut out = Self { mean, scale: vec![1.0; dim] };
        for k in 0..dim {
            if k < skip_columns {
                out.mean[k] = 0.0;
            } else {
                let sd = (sq[k] / count as f64).sqrt();
                if sd > 0.0 {
                    out.scale[k] = sd;
                }
            }
        }
        Ok(out)
    }

    /// Transforms unmasked rows; padding stays zero.
    pub fn apply(&self, samples: &[Sample]) -> Vec<Sample> {
        samples
            .iter()
            .map(|s| {
                let mut s = s.clone();
                for t in 0..s.valid_len() {
                    for (k, v) in s.features.row_mut(t).iter_mut().enumerate() {
                        *v = (*v - self.mean[k]) / self.scale[k];
                    }
                }
                s
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub standardization: Option<Standardizer>,
}

/// Fits on the training samples only and transforms both sides.
pub fn standardize(split: DatasetSplit) -> Result<DatasetSplit> {
    let st = Standardizer::fit(&split.train, ONE_HOT_COLUMNS)?;
    Ok(DatasetSplit { train: st.apply(&split.train), test: st.apply(&split.test), standardization: Some(st) })
}
