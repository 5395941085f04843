use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use seqkan::data::{
    assemble_sequences, build_windows, read_samples, samples_to_batch, synth_generate, synth_records, undersample,
    write_performance_file, write_samples, AssembleOptions, ColumnMap, Standardizer, SynthConfig, WindowSpec,
    FEATURE_NAMES,
};
use seqkan::data::records::PerformanceReader;
use seqkan::data::window::ONE_HOT_COLUMNS;
use seqkan::experiment::{emit_reports, run_experiment, DataSource, ExperimentConfig, Scenario};
use seqkan::layers::model::ModelKind;
use seqkan::layers::ModelParams;
use seqkan::metrics::evaluate;
use seqkan::tensor::SeededRng;
use seqkan::training::{gradient_check, gradient_check_head, predict, train, write_trace_csv, GradCheckScale};

#[derive(Parser)]
#[command(name = "seqkan", version, about = "Recurrent KAN models for early loan-default prediction")]
struct Cli {
    /// Experiment config (JSON, or TOML by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Vary the feature window length with no gap.
    WindowSweep(SweepArgs),
    /// Vary the gap with feature length plus gap held fixed.
    IntervalSweep(SweepArgs),
    /// Vary the amount of ingested training data.
    SampleSweep(SweepArgs),
    /// Train on one origination year and test on later ones.
    Cohorts(CohortArgs),
    /// Train one model on a samples file.
    Train(TrainArgs),
    /// Score a samples file with a trained model.
    Score(ScoreArgs),
    /// Compare analytic and finite-difference gradients on miniature models.
    Gradcheck(GradcheckArgs),
    /// Write synthetic performance files in the pipe-delimited layout.
    Synth(SynthArgs),
    /// Turn performance files into a windowed samples file.
    Ingest(IngestArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Comma-separated model list, e.g. GRU-KAN,LSTM.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Synthetic loans per cohort.
    #[arg(long)]
    loans: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep values (window lengths, gaps or budgets).
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct CohortArgs {
    /// Pairs as TRAIN:TEST, comma-separated, e.g. 2018:2019,2018:2020.
    #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
    pairs: Option<Vec<(u16, u16)>>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Training samples file.
    #[arg(long)]
    samples: PathBuf,
    /// Optional held-out samples file to evaluate after training.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, default_value = "GRU-KAN")]
    model: ModelKind,
    #[arg(long)]
    epochs: Option<usize>,
    /// Balance the training file by undersampling non-defaults first.
    #[arg(long)]
    balance: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    /// Standardizer written by `train`; defaults to the one beside the model.
    #[arg(long)]
    standardizer: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Model kinds to check; all when omitted.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    /// Number of seeds, starting at the base seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    loans: Option<usize>,
    #[arg(long)]
    default_rate: Option<f64>,
    #[arg(long)]
    signal: Option<f64>,
    /// Origination years to generate; each gets its own file.
    #[arg(long, value_delimiter = ',', default_value = "2019,2020")]
    years: Vec<u16>,
    #[arg(long, default_value_t = 0.25)]
    drift_per_year: f64,
}

#[derive(Args)]
struct IngestArgs {
    /// Performance files, read in order.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Column map (JSON or TOML); the published layout when omitted.
    #[arg(long)]
    column_map: Option<PathBuf>,
    /// Feature length, gap and observation length, e.g. 15,0,3.
    #[arg(long, value_parser = parse_window, default_value = "15,0,3")]
    window: WindowSpec,
    /// Stop after this many parsed records.
    #[arg(long)]
    max_records: Option<usize>,
    /// Balance by undersampling non-defaults (uses --seed).
    #[arg(long)]
    balance: bool,
    /// Samples file to write; a JSON sidecar goes next to it.
    #[arg(long)]
    output: PathBuf,
}

fn parse_pair(s: &str) -> Result<(u16, u16), String> {
    let (a, b) = s.split_once(':').ok_or("expected TRAIN:TEST")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_window(s: &str) -> Result<WindowSpec, String> {
    let v: Vec<usize> = s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    match v[..] {
        [x, g, y] => WindowSpec::new(x, g, y).map_err(|e| e.to_string()),
        _ => Err("expected x,gap,y".into()),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    match cli.command {
        Command::WindowSweep(a) => sweep(cfg, Scenario::WindowSweep, a),
        Command::IntervalSweep(a) => sweep(cfg, Scenario::IntervalSweep, a),
        Command::SampleSweep(a) => sweep(cfg, Scenario::SampleSizeSweep, a),
        Command::Cohorts(a) => {
            if let Some(p) = a.pairs {
                cfg.cohort_pairs = p;
            }
            experiment(cfg, Scenario::CohortGeneralization, &a.run)
        }
        Command::Train(a) => train_cmd(cfg, a),
        Command::Score(a) => score_cmd(cfg, a),
        Command::Gradcheck(a) => gradcheck_cmd(cfg, a),
        Command::Synth(a) => synth_cmd(cfg, a),
        Command::Ingest(a) => ingest_cmd(cfg, a),
    }
}

fn sweep(mut cfg: ExperimentConfig, scenario: Scenario, a: SweepArgs) -> Result<()> {
    if let Some(s) = a.sweep {
        cfg.sweep = s;
    }
    experiment(cfg, scenario, &a.run)
}

fn apply_run_args(cfg: &mut ExperimentConfig, r: &RunArgs) {
    if let Some(m) = &r.models {
        cfg.models = m.clone();
    }
    if let Some(t) = r.trials {
        cfg.trials = t;
    }
    if let Some(e) = r.epochs {
        cfg.train.epochs = e;
    }
    if let (Some(n), DataSource::Synthetic { generator, .. }) = (r.loans, &mut cfg.data) {
        generator.n_loans = n;
    }
}

fn experiment(mut cfg: ExperimentConfig, scenario: Scenario, r: &RunArgs) -> Result<()> {
    cfg.scenario = scenario;
    apply_run_args(&mut cfg, r);
    let run = run_experiment(&cfg)?;
    let files = emit_reports(&cfg, &run, &cfg.output_dir)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn standardizer_path(model: &Path) -> PathBuf {
    model.with_file_name("standardizer.json")
}

fn train_cmd(cfg: ExperimentConfig, a: TrainArgs) -> Result<()> {
    let (mut samples, _) = read_samples(&a.samples).with_context(|| format!("reading {}", a.samples.display()))?;
    if a.balance {
        samples = undersample(&samples, &mut SeededRng::new(cfg.base_seed))?;
    }
    let st = Standardizer::fit(&samples, ONE_HOT_COLUMNS)?;
    let samples = st.apply(&samples);
    let (batch, labels) = samples_to_batch(&samples)?;
    let mut tc = cfg.train.clone();
    tc.seed = cfg.base_seed;
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    let spec = seqkan::experiment::run::model_spec(&cfg, a.model);
    let outcome = train(&spec, &batch, &labels, &tc)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let model_path = cfg.output_dir.join("model.json");
    outcome.params.save_json(&model_path)?;
    std::fs::write(standardizer_path(&model_path), serde_json::to_string_pretty(&st)?)?;
    write_trace_csv(&cfg.output_dir.join("trace.csv"), &outcome.trace)?;
    log::info!("trained {} for {} epochs (best {})", a.model, outcome.trace.len(), outcome.best_epoch);
    println!("{}", model_path.display());
    if let Some(test) = a.test {
        score_samples(&outcome.params, &st, &test, &cfg.output_dir, cfg.threshold)?;
    }
    Ok(())
}

fn score_samples(params: &ModelParams, st: &Standardizer, path: &Path, out: &Path, threshold: f64) -> Result<()> {
    let (samples, _) = read_samples(path).with_context(|| format!("reading {}", path.display()))?;
    let samples = st.apply(&samples);
    let (batch, _) = samples_to_batch(&samples)?;
    let scores = predict(params, &batch)?;
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("scores.csv"))?;
    w.write_record(["loan_id", "label", "score"])?;
    for (s, p) in samples.iter().zip(&scores) {
        w.write_record([s.loan_id.clone(), s.label.to_string(), p.to_string()])?;
    }
    w.flush()?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    match evaluate(&scores, &labels, threshold) {
        Ok(m) => {
            std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&m)?)?;
            println!("accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} auc {:.4}", m.accuracy, m.precision, m.recall, m.f1, m.auc);
        }
        Err(e) => log::warn!("metrics unavailable: {e}"),
    }
    Ok(())
}

fn score_cmd(cfg: ExperimentConfig, a: ScoreArgs) -> Result<()> {
    let params = ModelParams::load_json(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let st_path = a.standardizer.unwrap_or_else(|| standardizer_path(&a.model));
    let st: Standardizer = serde_json::from_str(&std::fs::read_to_string(&st_path).with_context(|| format!("reading {}", st_path.display()))?)?;
    score_samples(&params, &st, &a.samples, &cfg.output_dir, cfg.threshold)
}

fn gradcheck_cmd(cfg: ExperimentConfig, a: GradcheckArgs) -> Result<()> {
    let kinds = a.models.unwrap_or_else(|| ModelKind::ALL.to_vec());
    let mut worst: f64 = 0.0;
    for seed in cfg.base_seed..cfg.base_seed + a.seeds {
        for &k in &kinds {
            let r = gradient_check(k, GradCheckScale::default(), seed)?;
            println!("{:<9} seed {seed:<3} params {:<4} max rel err {:.3e} at {}", r.model, r.parameters, r.max_rel_error, r.worst);
            worst = worst.max(r.max_rel_error);
        }
        let h = gradient_check_head(4, 6, seed)?;
        println!("{:<9} seed {seed:<3} params {:<4} max rel err {:.3e} at {}", h.model, h.parameters, h.max_rel_error, h.worst);
    }
    if worst > a.tolerance {
        bail!("max relative error {worst:.3e} exceeds {:.1e}", a.tolerance);
    }
    Ok(())
}

fn synth_cmd(cfg: ExperimentConfig, a: SynthArgs) -> Result<()> {
    let mut generator = match &cfg.data {
        DataSource::Synthetic { generator, .. } => generator.clone(),
        DataSource::Freddie { .. } => SynthConfig::default(),
    };
    generator.seed = cfg.base_seed;
    if let Some(n) = a.loans {
        generator.n_loans = n;
    }
    if let Some(r) = a.default_rate {
        generator.default_rate = r;
    }
    if let Some(s) = a.signal {
        generator.signal_strength = s;
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let map = ColumnMap::default();
    for year in a.years {
        let gen = seqkan::experiment::run::synthetic_cohort(&generator, a.drift_per_year, year);
        let seqs = synth_generate(&gen)?;
        let path = cfg.output_dir.join(format!("synthetic_{year}.txt"));
        write_performance_file(&path, &map, &synth_records(&seqs))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn ingest_cmd(cfg: ExperimentConfig, a: IngestArgs) -> Result<()> {
    let map = match &a.column_map {
        Some(p) => ColumnMap::load(p)?,
        None => ColumnMap::default(),
    };
    let mut records = Vec::new();
    for path in &a.inputs {
        let remaining = a.max_records.map(|m| m.saturating_sub(records.len()));
        if remaining == Some(0) {
            break;
        }
        let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let mut reader = PerformanceReader::new(std::io::BufReader::new(file), map.clone()).with_limit(remaining);
        for r in reader.by_ref() {
            records.push(r?);
        }
        let rep = reader.report();
        log::info!("{}: {} lines, {} parsed, {} skipped", path.display(), rep.lines, rep.parsed, rep.skipped);
        for (line, reason) in &rep.examples {
            log::debug!("  line {line}: {reason}");
        }
    }
    let seqs = assemble_sequences(records, AssembleOptions::default())?;
    let defaulted = seqs.iter().filter(|s| s.months.iter().any(|m| seqkan::data::window::is_default_status(&m.clds, true))).count();
    let mut samples = build_windows(&seqs, a.window)?;
    let positives = samples.iter().filter(|s| s.label == 1).count();
    log::info!(
        "{} loans ({:.3}% ever default), {} windows ({:.3}% default)",
        seqs.len(),
        100.0 * defaulted as f64 / seqs.len().max(1) as f64,
        samples.len(),
        100.0 * positives as f64 / samples.len().max(1) as f64
    );
    if a.balance {
        samples = undersample(&samples, &mut SeededRng::new(cfg.base_seed))?;
    }
    if let Some(dir) = a.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let side = write_samples(&a.output, &samples, Some(a.window), &FEATURE_NAMES, None)?;
    println!("{} samples ({} default) -> {}", side.samples, side.positives, a.output.display());
    Ok(())
}
