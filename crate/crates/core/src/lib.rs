//! Recurrent networks with Kolmogorov–Arnold heads for early loan-default
//! prediction: tensors and layers with exact backpropagation, training,
//! a loan-performance data pipeline, evaluation metrics and seeded
//! experiment protocols.

// Index loops mirror the per-unit formulas in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod metrics;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
