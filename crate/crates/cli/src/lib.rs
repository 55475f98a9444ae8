//! Command-line front end for the busflux pipeline.
//!
//! Exit codes: 0 on success, 1 for domain errors (column mismatch, invalid
//! config, diverged training, unknown plot input), 2 for I/O and parse errors.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

use std::path::{Path, PathBuf};

use busflux_core::aggregation::DateRange;
use busflux_core::features::SplitMode;
use busflux_core::models::{ModelKind, Optimizer};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::commands::PlotInput;
use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] busflux_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Input has a shape this command does not understand.
    #[error("unrecognized input: {0}")]
    Schema(String),

    #[error("{0}")]
    Domain(String),

    #[error("usage: {0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_io_or_parse() => 2,
            CliError::Core(_) | CliError::Schema(_) | CliError::Domain(_) => 1,
            CliError::Io { .. } | CliError::Usage(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "busflux", version, about = "Bus-stop passenger counting and ridership prediction from Wi-Fi frames")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario with planted ground truth.
    Synth(SynthArgs),
    /// Filter noise frames and segment dwells.
    Clean(CleanArgs),
    /// Per-minute and hourly counts from segments.
    Aggregate(AggregateArgs),
    /// Join hourly counts with weather and calendar features.
    Join(JoinArgs),
    /// Split, encode and normalize joined rows.
    Featurize(FeaturizeArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Score models on a test matrix and compare them.
    Evaluate(EvaluateArgs),
    /// Rank features by gradient-boosting impurity importance.
    Importance(ImportanceArgs),
    /// Render an SVG chart from a history, hourly counts or evaluation report.
    Plot(PlotArgs),
    /// Run every stage on a synthetic scenario.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub days: Option<u32>,
    /// Same fraction for every noise class.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Write SHA-1 digests instead of raw MAC addresses.
    #[arg(long)]
    pub anonymize: bool,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out_segments: PathBuf,
    #[arg(long)]
    pub out_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub out_hourly: PathBuf,
    #[arg(long)]
    pub out_minutes: Option<PathBuf>,
    /// First UTC date (inclusive); needs --end.
    #[arg(long, requires = "end")]
    pub start: Option<NaiveDate>,
    /// Last UTC date (inclusive); needs --start.
    #[arg(long, requires = "start")]
    pub end: Option<NaiveDate>,
    /// Comma-separated stops that get rows even when empty.
    #[arg(long, value_delimiter = ',')]
    pub stops: Vec<String>,
}

#[derive(Debug, Args)]
pub struct JoinArgs {
    #[arg(long)]
    pub counts: PathBuf,
    /// OpenWeather-style JSON array or CSV.
    #[arg(long)]
    pub weather: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub out_report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Random,
    TimeBlocked,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub joined: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Lr,
    Wnn,
    Dnn,
    Cart,
    Gbt,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Lr => ModelKind::Lr,
            ModelArg::Wnn => ModelKind::Wnn,
            ModelArg::Dnn => ModelKind::Dnn,
            ModelArg::Cart => ModelKind::Cart,
            ModelArg::Gbt => ModelKind::Gbt,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Directory written by `featurize`.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV for neural models.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model files; repeat for several.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    /// Saved gbt model.
    #[arg(long, conflicts_with = "features")]
    pub model: Option<PathBuf>,
    /// Fit a fresh ensemble on this featurized directory's training split.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "input")]
pub struct PlotSource {
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub counts: Option<PathBuf>,
    #[arg(long)]
    pub mse_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub source: PlotSource,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the plotted series as CSV.
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub days: Option<u32>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn manifest_path(cli_override: &Option<PathBuf>, beside: &Path, command: &str) -> PathBuf {
    cli_override.clone().unwrap_or_else(|| {
        let dir = beside.parent().unwrap_or(Path::new(""));
        dir.join(format!("{command}.manifest.json"))
    })
}

/// Parses nothing; runs an already parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let base = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => {
            let mut cfg = base.resolve(a.seed)?;
            if let Some(d) = a.days {
                cfg.scenario.days = d;
            }
            if let Some(f) = a.noise {
                cfg.scenario.noise = busflux_core::synth::NoiseMix::uniform(f);
            }
            let mut m = ManifestBuilder::new("synth", Some(cfg.seed), cfg.to_json());
            commands::synth(&cfg.scenario, &a.out_dir, a.anonymize, &mut m)?;
            let path = cli.manifest.unwrap_or_else(|| a.out_dir.join("synth.manifest.json"));
            m.write(&path)?;
        }
        Command::Clean(a) => {
            let cfg = base.resolve(None)?;
            let mut m = ManifestBuilder::new("clean", None, serde_json::to_value(&cfg.cleaning).expect("serializable"));
            let out = commands::clean_cmd(&a.frames, &cfg.cleaning, &a.out_segments, a.out_report.as_deref(), &mut m)?;
            let r = &out.report;
            println!(
                "input {} kept {} (segments {}); dropped randomized {} single-stop {} rssi {} short {} long {}",
                r.input_frames,
                r.kept_frames,
                r.kept_segments,
                r.dropped_randomized,
                r.dropped_single_stop,
                r.dropped_rssi,
                r.dropped_short,
                r.dropped_long
            );
            m.write(&manifest_path(&cli.manifest, &a.out_segments, "clean"))?;
        }
        Command::Aggregate(a) => {
            let cfg = base.resolve(None)?;
            let range = match (a.start, a.end) {
                (Some(s), Some(e)) => Some(DateRange::new(s, e)?),
                _ => cfg.date_range,
            };
            let mut stops = cfg.stops.clone();
            stops.extend(a.stops.iter().cloned());
            let mut m = ManifestBuilder::new("aggregate", None, serde_json::json!({ "date_range": range, "stops": stops }));
            let n = commands::aggregate_cmd(&a.segments, range, &stops, &a.out_hourly, a.out_minutes.as_deref(), &mut m)?;
            println!("{n} hourly rows");
            m.write(&manifest_path(&cli.manifest, &a.out_hourly, "aggregate"))?;
        }
        Command::Join(a) => {
            let cfg = base.resolve(None)?;
            let mut m = ManifestBuilder::new("join", None, serde_json::to_value(&cfg.calendar).expect("serializable"));
            let r = commands::join_cmd(&a.counts, &a.weather, &cfg.calendar, &a.out, a.out_report.as_deref(), &mut m)?;
            println!(
                "joined {} of {} rows ({} without weather, {} before semester)",
                r.rows_out, r.rows_in, r.dropped_no_weather, r.rejected_pre_semester
            );
            m.write(&manifest_path(&cli.manifest, &a.out, "join"))?;
        }
        Command::Featurize(a) => {
            let mut cfg = base.resolve(a.seed)?;
            if let Some(s) = a.split {
                cfg.split.mode = match s {
                    SplitArg::Random => SplitMode::Random,
                    SplitArg::TimeBlocked => SplitMode::TimeBlocked,
                };
            }
            let mut m = ManifestBuilder::new("featurize", Some(cfg.seed), serde_json::to_value(&cfg.split).expect("serializable"));
            let meta = commands::featurize_cmd(&a.joined, &cfg.split, &a.out_dir, &mut m)?;
            println!("{} columns; rows {:?}", meta.encoder.columns.len(), meta.rows);
            m.write(&cli.manifest.unwrap_or_else(|| a.out_dir.join("featurize.manifest.json")))?;
        }
        Command::Train(a) => {
            let mut cfg = base.resolve(a.seed)?;
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = a.learning_rate {
                cfg.train.learning_rate = lr;
            }
            if let Some(b) = a.batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(o) = a.optimizer {
                cfg.train.optimizer = match o {
                    OptimizerArg::Sgd => Optimizer::Sgd,
                    OptimizerArg::Adam => Optimizer::Adam,
                };
            }
            cfg.train.validate()?;
            let kind = ModelKind::from(a.model);
            let mut m = ManifestBuilder::new("train", Some(cfg.seed), serde_json::to_value(&cfg.train).expect("serializable"));
            commands::train_cmd(kind, &a.features, &cfg.train, &a.out, a.history.as_deref(), &mut m)?;
            println!("trained {kind} -> {}", a.out.display());
            m.write(&manifest_path(&cli.manifest, &a.out, &format!("train_{kind}")))?;
        }
        Command::Evaluate(a) => {
            let mut m = ManifestBuilder::new("evaluate", None, serde_json::Value::Null);
            let report = commands::evaluate_cmd(&a.models, &a.test, &a.out, a.predictions.as_deref(), &mut m)?;
            for s in &report.comparison.ranking {
                println!("{:<6} mse {:.4} mae {:.4}", s.name, s.mse, s.mae);
            }
            for i in &report.comparison.improvements {
                println!("{} vs {}: {:.1}% lower mse", i.model, i.baseline, i.improvement_pct);
            }
            m.write(&manifest_path(&cli.manifest, &a.out, "evaluate"))?;
        }
        Command::Importance(a) => {
            let cfg = base.resolve(None)?;
            let mut m = ManifestBuilder::new("importance", Some(cfg.seed), serde_json::to_value(&cfg.train.gbt).expect("serializable"));
            let rows = commands::importance_cmd(a.model.as_deref(), a.features.as_deref(), &cfg.train.gbt, &a.out, &mut m)?;
            for r in rows.iter().take(15) {
                println!("{:>3}  {:<40} {:.4}", r.rank, r.feature, r.importance);
            }
            m.write(&manifest_path(&cli.manifest, &a.out, "importance"))?;
        }
        Command::Plot(a) => {
            let input = match (&a.source.history, &a.source.counts, &a.source.mse_report) {
                (Some(p), _, _) => PlotInput::History(p),
                (_, Some(p), _) => PlotInput::Counts(p),
                (_, _, Some(p)) => PlotInput::MseReport(p),
                _ => return Err(CliError::Usage("plot needs --history, --counts or --mse-report".into())),
            };
            let mut m = ManifestBuilder::new("plot", None, serde_json::Value::Null);
            commands::plot_cmd(input, &a.out, a.csv_out.as_deref(), &mut m)?;
            m.write(&manifest_path(&cli.manifest, &a.out, "plot"))?;
        }
        Command::Pipeline(a) => {
            let mut cfg = base.resolve(a.seed)?;
            if let Some(d) = a.days {
                cfg.scenario.days = d;
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            cfg.train.validate()?;
            let mut m = ManifestBuilder::new("pipeline", Some(cfg.seed), cfg.to_json());
            let run = commands::pipeline(&cfg, &a.out_dir, &mut m)?;
            for s in &run.evaluation.comparison.ranking {
                println!("{:<6} mse {:.4} mae {:.4}", s.name, s.mse, s.mae);
            }
            m.write(&cli.manifest.unwrap_or(run.manifest))?;
        }
    }
    Ok(())
}
