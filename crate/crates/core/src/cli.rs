//! Command-line front end.
//!
//! `--config <json>` supplies defaults for any flag of the chosen subcommand:
//! keys mirror flag names (`learning_rate` or `learning-rate`), arrays become
//! comma lists, booleans toggle switches. Flags given on the command line win.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::{
    self, run_type1_sweep, run_type2_convergence, run_type4_comparison, sequential_evaluate,
    Type1Sweep, Type2Convergence, Type4Comparison, SIXTEEN_TO_ONE,
};
use crate::graphdata::{chronological_split, load_csv, summary_stats, InteractionLog};
use crate::losses::LossKind;
use crate::model::Checkpoint;
use crate::synthgen::{self, Type4Params};
use crate::tbatcher::{batch_size_distribution, build_batches};
use crate::trainer::{gradient_check_toy, train, TrainConfig};

/// Default dataset directory for relative `--data` paths.
pub const DATA_DIR_ENV: &str = "TEMPO_EMBED_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "tempo-embed",
    version,
    about = "Temporal interaction embeddings with t-batch training"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic interaction log as CSV.
    Generate(GenerateArgs),
    /// Histogram of t-batch sizes for a log.
    BatchStats(BatchStatsArgs),
    /// Train a model and write a checkpoint and report.
    Train(TrainArgs),
    /// Sequential next-item evaluation of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Run one of the synthetic experiments.
    Experiment(ExperimentArgs),
    /// Finite-difference check of the full model under every loss.
    GradientCheck(GradientCheckArgs),
    /// Dataset summary statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Interaction CSV; relative paths also resolve against $TEMPO_EMBED_DATA_DIR.
    #[arg(long)]
    pub data: PathBuf,
    /// The CSV has no header row.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON file with defaults for this subcommand's flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Network type.
    #[arg(long = "type", value_parser = clap::value_parser!(u8).range(1..=4))]
    pub kind: u8,
    /// Type 1: number of interactions (even).
    #[arg(long, default_value_t = 4000)]
    pub k: usize,
    /// Type 1: probability that user 3 picks item 4.
    #[arg(long, default_value_t = 0.6)]
    pub p: f64,
    /// Type 2: user/item pairs.
    #[arg(long, default_value_t = 5)]
    pub n_pairs: usize,
    /// Type 2: repetitions of the base sequence.
    #[arg(long, default_value_t = 200)]
    pub repetitions: usize,
    /// Types 3 and 4: number of users.
    #[arg(long, default_value_t = 100)]
    pub n_users: usize,
    /// Type 4: number of items.
    #[arg(long, default_value_t = 100)]
    pub n_items: usize,
    /// Type 4: out-degree of the recommendation graph.
    #[arg(long, default_value_t = 10)]
    pub k_out: usize,
    /// Type 4: probability of a uniformly random item.
    #[arg(long, default_value_t = 0.25)]
    pub p_jump: f64,
    /// Type 4: rate of the exponential inter-arrival times.
    #[arg(long, default_value_t = 1.0)]
    pub arrival_rate: f64,
    /// Type 4: number of interactions.
    #[arg(long, default_value_t = 8500)]
    pub n_interactions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct BatchStatsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Histogram CSV (`size,count`); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON; stdout when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

/// Training hyperparameters; unset flags fall back to the config file, then
/// to built-in defaults.
#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    /// Loss: tbatch, item-sum or full-sum [default: tbatch]
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Epochs [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Embedding dimension [default: 64]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Root seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Adam step size [default: 0.001]
    #[arg(long, visible_alias = "lr")]
    pub learning_rate: Option<f64>,
    /// L2 weight decay [default: 0.00001]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Consecutive t-batches per optimizer step [default: 1]
    #[arg(long)]
    pub span_size: Option<usize>,
    /// User drift penalty [default: 1]
    #[arg(long)]
    pub lambda_u: Option<f64>,
    /// Item drift penalty [default: 1]
    #[arg(long)]
    pub lambda_i: Option<f64>,
    /// Global gradient-norm clip [default: 5]
    #[arg(long)]
    pub grad_clip: Option<f64>,
}

impl TrainFlags {
    pub fn resolve(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            loss_kind: self.loss.unwrap_or(d.loss_kind),
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            span_size: self.span_size.unwrap_or(d.span_size),
            seed: self.seed.unwrap_or(d.seed),
            d: self.dim.unwrap_or(d.d),
            lambda_u: self.lambda_u.unwrap_or(d.lambda_u),
            lambda_i: self.lambda_i.unwrap_or(d.lambda_i),
            grad_clip: self.grad_clip.unwrap_or(d.grad_clip),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Train on this leading fraction of the log; the rest is evaluated after every epoch.
    #[arg(long, default_value_t = 1.0)]
    pub train_fraction: f64,
    /// Checkpoint JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report JSON; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Leading fraction the checkpoint was trained on; the remainder is ranked.
    #[arg(long, default_value_t = SIXTEEN_TO_ONE)]
    pub train_fraction: f64,
    /// Metrics JSON; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-interaction ranks CSV.
    #[arg(long)]
    pub ranks: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Decision boundary sweep on type-1 networks.
    Type1,
    /// Epochs to learn edge (1, 4) on type-2 networks.
    Type2,
    /// Loss comparison on type-4 networks.
    Type4,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: ExperimentKind,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Losses to compare.
    #[arg(long, value_delimiter = ',', default_values_t = LossKind::TRAINABLE)]
    pub losses: Vec<LossKind>,
    /// Seeds (samples) per cell.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Type 1: interactions per network.
    #[arg(long, default_value_t = 4000)]
    pub k: usize,
    /// Type 1: probabilities to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.55, 0.6, 0.8])]
    pub p_grid: Vec<f64>,
    /// Type 2: user/item pairs.
    #[arg(long, default_value_t = 5)]
    pub n_pairs: usize,
    /// Type 2: repetitions of the base sequence.
    #[arg(long, default_value_t = 200)]
    pub repetitions: usize,
    /// Type 4: training-set sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [8000])]
    pub train_sizes: Vec<usize>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Directory for `tidy.csv` and `summary.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct GradientCheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    /// Failure threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatsFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `json` for the summary, `csv` for one row per user.
    #[arg(long, value_enum, default_value_t = StatsFormat::Json)]
    pub format: StatsFormat,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse_with_config(&argv) {
        Ok(cli) => cli,
        Err(ParseError::Clap(e)) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
        Err(ParseError::Domain(e)) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

enum ParseError {
    Clap(clap::Error),
    Domain(Error),
}

fn parse_with_config(argv: &[OsString]) -> std::result::Result<Cli, ParseError> {
    let first = Cli::try_parse_from(argv).map_err(ParseError::Clap)?;
    let Some(path) = config_path(&first.command) else {
        return Ok(first);
    };
    let extra = config_flags(path).map_err(ParseError::Domain)?;
    // Config-derived flags go right after the subcommand name so explicit
    // flags, which come later, override them.
    let sub = argv
        .iter()
        .position(|a| !a.to_string_lossy().starts_with('-') && a != &argv[0]);
    let mut merged: Vec<OsString> = Vec::with_capacity(argv.len() + extra.len());
    match sub {
        Some(i) => {
            merged.extend_from_slice(&argv[..=i]);
            merged.extend(extra.into_iter().map(OsString::from));
            merged.extend_from_slice(&argv[i + 1..]);
        }
        None => merged.extend_from_slice(argv),
    }
    Cli::try_parse_from(merged).map_err(ParseError::Clap)
}

fn config_path(cmd: &Command) -> Option<&Path> {
    let c = match cmd {
        Command::Generate(a) => &a.config,
        Command::BatchStats(a) => &a.config,
        Command::Train(a) => &a.config,
        Command::Evaluate(a) => &a.config,
        Command::Experiment(a) => &a.config,
        Command::GradientCheck(a) => &a.config,
        Command::Stats(a) => &a.config,
    };
    c.config.as_deref()
}

/// Flattens a JSON object into `--key value` tokens.
pub fn config_flags(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Config(format!("{}: expected a JSON object", path.display())))?;
    let mut out = Vec::new();
    for (key, v) in obj {
        if key == "config" {
            return Err(Error::Config("config files cannot nest".into()));
        }
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &serde_json::Value| -> Result<String> {
            match v {
                serde_json::Value::String(s) => Ok(s.clone()),
                serde_json::Value::Number(n) => Ok(n.to_string()),
                other => Err(Error::Config(format!(
                    "unsupported value for {key}: {other}"
                ))),
            }
        };
        match v {
            serde_json::Value::Bool(true) => out.push(flag),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
                out.push(flag);
                out.push(parts.join(","));
            }
            other => {
                out.push(flag);
                out.push(scalar(other)?);
            }
        }
    }
    Ok(out)
}

/// Resolves a data path, falling back to `$TEMPO_EMBED_DATA_DIR` for relative
/// paths that do not exist as given.
pub fn resolve_data_path(path: &Path) -> Result<PathBuf> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.is_relative() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::Config(format!(
        "data file {} not found",
        path.display()
    )))
}

fn check_output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::Config(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn load(data: &DataArgs) -> Result<InteractionLog> {
    load_csv(&resolve_data_path(&data.data)?, !data.no_header)
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path.unwrap_or(Path::new("<stdout>")), e))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::BatchStats(a) => batch_stats(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
        Command::GradientCheck(a) => gradient_check(a),
        Command::Stats(a) => stats(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    check_output(&a.out)?;
    let log = match a.kind {
        1 => synthgen::gen_type1(a.k, a.p, a.seed)?,
        2 => synthgen::gen_type2(a.n_pairs, a.repetitions, a.seed)?,
        3 => synthgen::gen_type3(a.n_users, a.seed)?,
        _ => {
            let params = Type4Params {
                n_users: a.n_users,
                n_items: a.n_items,
                k_out: a.k_out,
                p_jump: a.p_jump,
                arrival_rate: a.arrival_rate,
                n_interactions: a.n_interactions,
            };
            synthgen::gen_type4(&params, a.seed)?.0
        }
    };
    log.save_csv(&a.out)
}

#[derive(Serialize)]
struct BatchSummary {
    num_interactions: usize,
    num_batches: usize,
    mean_size: f64,
    variance: f64,
    max_size: usize,
}

fn batch_stats(a: BatchStatsArgs) -> Result<()> {
    for p in a.out.iter().chain(&a.summary) {
        check_output(p)?;
    }
    let log = load(&a.data)?;
    let plan = build_batches(&log);
    let dist = batch_size_distribution(&plan);
    let mut w = writer(a.out.as_deref())?;
    let io_path = a.out.clone().unwrap_or_else(|| "<stdout>".into());
    dist.write_csv(&mut w).map_err(|e| Error::io(&io_path, e))?;
    w.flush().map_err(|e| Error::io(&io_path, e))?;
    drop(w);
    write_json(
        a.summary.as_deref(),
        &BatchSummary {
            num_interactions: log.len(),
            num_batches: dist.num_batches,
            mean_size: dist.mean,
            variance: dist.variance,
            max_size: dist.max,
        },
    )
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    for p in a.out.iter().chain(&a.report) {
        check_output(p)?;
    }
    let cfg = a.train.resolve();
    cfg.validate()?;
    let log = load(&a.data)?;
    let (train_log, validation) = if a.train_fraction < 1.0 {
        let (t, v) = chronological_split(&log, a.train_fraction)?;
        (t, Some(v))
    } else {
        (log, None)
    };
    let (mut report, checkpoint) = train(&train_log, &cfg, validation.as_ref())?;
    if let Some(out) = &a.out {
        checkpoint.save(out)?;
        report.checkpoint = Some(out.display().to_string());
    }
    write_json(a.report.as_deref(), &report)
}

#[derive(Serialize)]
struct EvaluationReport {
    checkpoint: String,
    data: String,
    train_fraction: f64,
    metrics: evaluation::MetricsReport,
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    for p in a.report.iter().chain(&a.ranks) {
        check_output(p)?;
    }
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let log = load(&a.data)?;
    let (_, test) = chronological_split(&log, a.train_fraction)?;
    let metrics = sequential_evaluate(&checkpoint, &test)?;
    if let Some(path) = &a.ranks {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
        w.write_record(["index", "user", "item", "rank"])
            .map_err(csv_err)?;
        for (k, (it, r)) in test.interactions().iter().zip(&metrics.ranks).enumerate() {
            w.write_record([
                k.to_string(),
                test.user_label(it.user).to_string(),
                test.item_label(it.item).to_string(),
                r.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_json(
        a.report.as_deref(),
        &EvaluationReport {
            checkpoint: a.checkpoint.display().to_string(),
            data: a.data.data.display().to_string(),
            train_fraction: a.train_fraction,
            metrics,
        },
    )
}

#[derive(Serialize)]
struct ExperimentSummary<S: Serialize> {
    experiment: ExperimentKind,
    config: TrainConfig,
    spec: serde_json::Value,
    summary: Vec<S>,
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    if !a.out_dir.is_dir() {
        std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    }
    let train = a.train.resolve();
    train.validate()?;
    if a.losses.contains(&LossKind::UnbatchedReference) {
        return Err(Error::Argument(
            "the un-batched reference loss is not trainable".into(),
        ));
    }
    let tidy_path = a.out_dir.join("tidy.csv");
    let summary_path = a.out_dir.join("summary.json");
    match a.kind {
        ExperimentKind::Type1 => {
            let sweep = Type1Sweep {
                k: a.k,
                p_grid: a.p_grid.clone(),
                n_seeds: a.seeds,
                losses: a.losses.clone(),
                train: train.clone(),
            };
            let (cells, summary) = run_type1_sweep(&sweep, a.jobs)?;
            let rows: Vec<_> = cells.iter().map(|c| c.tidy()).collect();
            write_tidy(&tidy_path, &rows)?;
            let spec = serde_json::to_value(&sweep)?;
            write_json(
                Some(&summary_path),
                &ExperimentSummary {
                    experiment: a.kind,
                    config: train,
                    spec,
                    summary,
                },
            )
        }
        ExperimentKind::Type2 => {
            let exp = Type2Convergence {
                n_pairs: a.n_pairs,
                repetitions: a.repetitions,
                n_seeds: a.seeds,
                losses: a.losses.clone(),
                train: train.clone(),
            };
            let (cells, summary) = run_type2_convergence(&exp, a.jobs)?;
            let rows: Vec<_> = cells.iter().flat_map(|c| c.tidy()).collect();
            write_tidy(&tidy_path, &rows)?;
            let spec = serde_json::to_value(&exp)?;
            write_json(
                Some(&summary_path),
                &ExperimentSummary {
                    experiment: a.kind,
                    config: train,
                    spec,
                    summary,
                },
            )
        }
        ExperimentKind::Type4 => {
            let exp = Type4Comparison {
                params: Type4Params::default(),
                train_sizes: a.train_sizes.clone(),
                n_samples: a.seeds,
                losses: a.losses.clone(),
                train: train.clone(),
            };
            let (cells, summary) = run_type4_comparison(&exp, a.jobs)?;
            let rows: Vec<_> = cells.iter().flat_map(|c| c.tidy()).collect();
            write_tidy(&tidy_path, &rows)?;
            let spec = serde_json::to_value(&exp)?;
            write_json(
                Some(&summary_path),
                &ExperimentSummary {
                    experiment: a.kind,
                    config: train,
                    spec,
                    summary,
                },
            )
        }
    }
}

fn write_tidy(path: &Path, rows: &[evaluation::TidyRow]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    evaluation::write_tidy_csv(rows, BufWriter::new(f))
}

fn gradient_check(a: GradientCheckArgs) -> Result<()> {
    let results = gradient_check_toy(a.seed, a.dim)?;
    let mut worst = 0.0_f64;
    for (kind, err) in &results {
        println!("{kind}: max relative error {err:.3e}");
        worst = worst.max(*err);
    }
    println!("max relative error {worst:.3e}");
    if worst < a.tolerance {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: {worst:.3e} >= {:.1e}",
            a.tolerance
        )))
    }
}

fn stats(a: StatsArgs) -> Result<()> {
    if let Some(p) = &a.out {
        check_output(p)?;
    }
    let log = load(&a.data)?;
    let stats = summary_stats(&log)?;
    match a.format {
        StatsFormat::Json => write_json(a.out.as_deref(), &stats),
        StatsFormat::Csv => {
            let mut w = writer(a.out.as_deref())?;
            stats.write_per_user_csv(&mut w)?;
            w.flush()
                .map_err(|e| Error::io(a.out.as_deref().unwrap_or(Path::new("<stdout>")), e))
        }
    }
}
