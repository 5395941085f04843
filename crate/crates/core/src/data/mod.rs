//! From monthly performance records to labeled, masked, balanced samples.

pub mod io;
pub mod records;
pub mod sampling;
pub mod sequence;
pub mod synth;
pub mod window;

pub use io::{read_samples, write_samples, SamplesSidecar};
pub use records::{parse_performance_file, write_performance_file, Clds, ColumnMap, LoanMonthRecord, ParseReport, YearMonth};
pub use sampling::{standardize, undersample, DatasetSplit, Standardizer};
pub use sequence::{assemble_sequences, AssembleOptions, LoanSequence};
pub use synth::{synth_generate, synth_records, SynthConfig};
pub use window::{
    build_windows, engineer_features, label_window, pad_and_mask, samples_to_batch, Sample, WindowSpec, FEATURE_DIM,
    FEATURE_NAMES,
};
