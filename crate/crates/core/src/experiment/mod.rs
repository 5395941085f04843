//! Seeded multi-trial experiment protocols and their reports.

pub mod config;
pub mod report;
pub mod run;

pub use config::{BudgetUnit, DataSource, ExperimentConfig, Scenario};
pub use report::{aggregate_trials, emit_reports, AggregateReport, AggregateRow, Manifest, MetricStats};
pub use run::{
    prepare_points, run_cohort_generalization, run_experiment, run_interval_sweep, run_sample_size_sweep, run_trial,
    run_window_sweep, PointData, PointSummary, RunOutput, TrialResult,
};
