//! Columnar binary sample files with a JSON sidecar.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "SQKSAMP1"
//! n          u64      sample count
//! time       u32      steps per sample
//! dim        u32      features per step
//! labels     n × u8
//! cohorts    n × u16
//! lengths    n × u32  valid (unmasked) steps
//! ids        n × (u32 byte length, UTF-8 bytes)
//! features   dim blocks, block k holds feature k for every (sample, step)
//!            in sample-major order: n × time × f64
//! ```
//!
//! The sidecar (`<file>.json`) records the window spec, feature names and
//! standardization statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sampling::Standardizer;
use super::window::{pad_and_mask, Sample, WindowSpec};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const SAMPLES_MAGIC: &[u8; 8] = b"SQKSAMP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesSidecar {
    pub format: String,
    pub version: u32,
    pub samples: usize,
    pub time: usize,
    pub dim: usize,
    pub positives: usize,
    pub window: Option<WindowSpec>,
    pub feature_names: Vec<String>,
    pub standardization: Option<Standardizer>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Pads to a common length and writes the binary file plus sidecar.
pub fn write_samples(
    path: &Path,
    samples: &[Sample],
    window: Option<WindowSpec>,
    feature_names: &[&str],
    standardization: Option<&Standardizer>,
) -> Result<SamplesSidecar> {
    let time = samples.iter().map(Sample::time).max().unwrap_or(0);
    let dim = samples.first().map_or(feature_names.len(), |s| s.features.cols());
    let padded = pad_and_mask(samples, time)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SAMPLES_MAGIC)?;
    w.write_all(&(padded.len() as u64).to_le_bytes())?;
    w.write_all(&(time as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for s in &padded {
        w.write_all(&[s.label])?;
    }
    for s in &padded {
        w.write_all(&s.cohort_year.to_le_bytes())?;
    }
    for s in &padded {
        w.write_all(&(s.valid_len() as u32).to_le_bytes())?;
    }
    for s in &padded {
        w.write_all(&(s.loan_id.len() as u32).to_le_bytes())?;
        w.write_all(s.loan_id.as_bytes())?;
    }
    for k in 0..dim {
        for s in &padded {
            for t in 0..time {
                w.write_all(&s.features.get(t, k).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    let sidecar = SamplesSidecar {
        format: "seqkan-samples".into(),
        version: 1,
        samples: padded.len(),
        time,
        dim,
        positives: padded.iter().filter(|s| s.label == 1).count(),
        window,
        feature_names: feature_names.iter().map(|s| s.to_string()).collect(),
        standardization: standardization.cloned(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(sidecar)
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_samples(path: &Path) -> Result<(Vec<Sample>, SamplesSidecar)> {
    let sidecar: SamplesSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let mut r = BufReader::new(File::open(path)?);
    if &take::<8>(&mut r)? != SAMPLES_MAGIC {
        return Err(Error::Data(format!("{} is not a samples file", path.display())));
    }
    let n = u64::from_le_bytes(take(&mut r)?) as usize;
    let time = u32::from_le_bytes(take(&mut r)?) as usize;
    let dim = u32::from_le_bytes(take(&mut r)?) as usize;
    if (n, time, dim) != (sidecar.samples, sidecar.time, sidecar.dim) {
        return Err(Error::Data("samples file and sidecar disagree on shape".into()));
    }
    let labels: Vec<u8> = (0..n).map(|_| take::<1>(&mut r).map(|b| b[0])).collect::<Result<_>>()?;
    let cohorts: Vec<u16> = (0..n).map(|_| take(&mut r).map(u16::from_le_bytes)).collect::<Result<_>>()?;
    let lengths: Vec<usize> = (0..n).map(|_| take(&mut r).map(|b| u32::from_le_bytes(b) as usize)).collect::<Result<_>>()?;
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        ids.push(String::from_utf8(buf).map_err(|e| Error::Data(e.to_string()))?);
    }
    let mut features = vec![vec![0.0; time * dim]; n];
    for k in 0..dim {
        for f in features.iter_mut() {
            for t in 0..time {
                f[t * dim + k] = f64::from_le_bytes(take(&mut r)?);
            }
        }
    }
    let samples = features
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            if lengths[i] > time || labels[i] > 1 {
                return Err(Error::Data(format!("corrupt sample {i}")));
            }
            Ok(Sample {
                features: Matrix::from_vec(time, dim, f)?,
                mask: (0..time).map(|t| t < lengths[i]).collect(),
                label: labels[i],
                loan_id: std::mem::take(&mut ids[i]),
                cohort_year: cohorts[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, sidecar))
}
