use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AssembleOptions, SynthConfig, WindowSpec};
use crate::error::{Error, Result};
use crate::layers::model::ModelKind;
use crate::layers::ModelSpec;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Feature window length `x` varies with gap 0.
    WindowSweep,
    /// Gap `g` varies with `x + g` held fixed.
    IntervalSweep,
    /// Amount of training data ingested varies.
    SampleSizeSweep,
    /// Train on one origination year, test on another.
    CohortGeneralization,
    Single,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::WindowSweep => "window_sweep",
            Scenario::IntervalSweep => "interval_sweep",
            Scenario::SampleSizeSweep => "sample_size_sweep",
            Scenario::CohortGeneralization => "cohort_generalization",
            Scenario::Single => "single",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetUnit {
    /// The first N raw monthly records of the training cohort.
    Records,
    /// The first N eligible training windows, before balancing.
    Windows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Cohort `y` uses the generator with `cohort_year = y`, seed offset by
    /// `y` and drift `(y − generator.cohort_year) · drift_per_year`.
    Synthetic {
        #[serde(default)]
        generator: SynthConfig,
        #[serde(default = "default_drift")]
        drift_per_year: f64,
    },
    /// Pipe-delimited performance files per origination year.
    Freddie {
        cohorts: BTreeMap<u16, Vec<PathBuf>>,
        #[serde(default)]
        column_map: Option<PathBuf>,
    },
}

fn default_drift() -> f64 {
    0.25
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { generator: SynthConfig::default(), drift_per_year: default_drift() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub models: Vec<ModelKind>,
    pub data: DataSource,
    pub train_cohort: u16,
    pub test_cohort: u16,
    /// Window for `single`; `cohort_generalization` defaults to (15, 3, 3).
    pub window: Option<WindowSpec>,
    /// Observation length for the sweeps.
    pub obs_len: usize,
    /// Feature length plus gap in the interval sweep.
    pub interval_total: usize,
    /// Window lengths, gaps or budgets; empty selects the scenario default.
    pub sweep: Vec<usize>,
    pub budget_unit: Option<BudgetUnit>,
    /// `(train_year, test_year)` pairs for the cohort scenario.
    pub cohort_pairs: Vec<(u16, u16)>,
    /// Cap on records read per cohort.
    pub record_budget: Option<usize>,
    pub trials: usize,
    pub base_seed: u64,
    /// Keep weight initialization fixed across trials; only resampling varies.
    pub freeze_init: bool,
    pub train: TrainConfig,
    /// Layer sizes; cell type, KAN use and input width are set per model.
    pub model: ModelSpec,
    pub threshold: f64,
    pub assemble: AssembleOptions,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Single,
            models: ModelKind::ALL.to_vec(),
            data: DataSource::default(),
            train_cohort: 2019,
            test_cohort: 2020,
            window: None,
            obs_len: 3,
            interval_total: 21,
            sweep: Vec::new(),
            budget_unit: None,
            cohort_pairs: Vec::new(),
            record_budget: None,
            trials: 20,
            base_seed: 0,
            freeze_init: false,
            train: TrainConfig::default(),
            model: ModelSpec::default(),
            threshold: crate::metrics::DEFAULT_THRESHOLD,
            assemble: AssembleOptions::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

pub const DEFAULT_WINDOW_SWEEP: [usize; 6] = [12, 15, 18, 21, 24, 27];
pub const DEFAULT_INTERVAL_SWEEP: [usize; 6] = [3, 4, 5, 6, 7, 8];
pub const DEFAULT_RECORD_BUDGETS: [usize; 6] = [500_000, 1_000_000, 1_500_000, 2_000_000, 3_000_000, 5_000_000];
pub const DEFAULT_WINDOW_BUDGETS: [usize; 3] = [2000, 4000, 8000];
pub const DEFAULT_COHORT_PAIRS: [(u16, u16); 6] =
    [(2018, 2019), (2018, 2020), (2018, 2021), (2018, 2022), (2019, 2021), (2019, 2022)];
/// Records read per cohort in the cohort scenario when no budget is set.
pub const DEFAULT_COHORT_RECORDS: usize = 1_500_000;

impl ExperimentConfig {
    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(&text)?
        };
        Ok(cfg)
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self.data, DataSource::Synthetic { .. })
    }

    pub fn sweep_values(&self) -> Vec<usize> {
        if !self.sweep.is_empty() {
            return self.sweep.clone();
        }
        match self.scenario {
            Scenario::WindowSweep => DEFAULT_WINDOW_SWEEP.to_vec(),
            Scenario::IntervalSweep => DEFAULT_INTERVAL_SWEEP.to_vec(),
            Scenario::SampleSizeSweep => match self.budget_unit() {
                BudgetUnit::Records => DEFAULT_RECORD_BUDGETS.to_vec(),
                BudgetUnit::Windows => DEFAULT_WINDOW_BUDGETS.to_vec(),
            },
            Scenario::CohortGeneralization | Scenario::Single => Vec::new(),
        }
    }

    pub fn budget_unit(&self) -> BudgetUnit {
        self.budget_unit.unwrap_or(if self.is_synthetic() { BudgetUnit::Windows } else { BudgetUnit::Records })
    }

    pub fn pairs(&self) -> Vec<(u16, u16)> {
        if !self.cohort_pairs.is_empty() {
            return self.cohort_pairs.clone();
        }
        if self.is_synthetic() {
            vec![(self.train_cohort, self.test_cohort), (self.train_cohort, self.test_cohort + 1)]
        } else {
            DEFAULT_COHORT_PAIRS.to_vec()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.models.is_empty() {
            return bad("no models selected".into());
        }
        self.train.validate()?;
        if let Some(w) = self.window {
            w.validate()?;
        }
        if self.obs_len == 0 {
            return bad("obs_len must be at least 1".into());
        }
        match self.scenario {
            Scenario::WindowSweep | Scenario::SampleSizeSweep if self.sweep_values().contains(&0) => {
                return bad("sweep values must be positive".into())
            }
            Scenario::IntervalSweep => {
                if let Some(&g) = self.sweep_values().iter().find(|&&g| g >= self.interval_total) {
                    return bad(format!("gap {g} leaves no feature months within {}", self.interval_total));
                }
            }
            Scenario::CohortGeneralization => {
                if let Some((a, _)) = self.pairs().into_iter().find(|(a, b)| a == b) {
                    return Err(Error::Data(format!("out-of-time violation: train and test cohort are both {a}")));
                }
            }
            _ => {}
        }
        if self.scenario != Scenario::CohortGeneralization && self.train_cohort == self.test_cohort {
            return Err(Error::Data(format!("out-of-time violation: train and test cohort are both {}", self.train_cohort)));
        }
        if let DataSource::Synthetic { generator, .. } = &self.data {
            generator.validate()?;
        }
        Ok(())
    }
}
