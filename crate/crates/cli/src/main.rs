use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lagcast_core::calendar::CalendarKind;
use lagcast_core::slidewin::LagSet;

mod commands;
mod exit;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "lagcast", version, about = "Lagged daily-mean weather forecasting workbench")]
struct Cli {
    /// Worker thread cap for every parallel stage.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic hourly archive and its static field.
    Synth(SynthArgs),
    /// Build lagged daily-mean shards and the pair manifest.
    Augment(AugmentArgs),
    /// Train a model on an augmented shard directory.
    Train(TrainArgs),
    /// Roll a checkpoint out from scheduled initial days.
    Infer(InferArgs),
    /// Score forecast trajectories against the lag0 analysis.
    Eval(EvalArgs),
    /// Compare two score tables.
    Compare(CompareArgs),
    /// Run a synthetic lag or recency experiment end to end.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// key=value synthetic dataset config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_lags(text: &str) -> Result<LagSet, String> {
    let lags = text
        .split(',')
        .map(|s| s.trim().parse::<u32>().map_err(|e| format!("{s:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    LagSet::new(lags).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Hourly GRD1 archive.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated lags in hours, from {0,6,12,18}.
    #[arg(long, value_parser = parse_lags, default_value = "0")]
    pub lags: LagSet,
    /// Days between input and target.
    #[arg(long, default_value_t = 1)]
    pub dt: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Calendar {
    Gregorian,
    Noleap,
}

impl From<Calendar> for CalendarKind {
    fn from(c: Calendar) -> Self {
        match c {
            Calendar::Gregorian => CalendarKind::Gregorian,
            Calendar::Noleap => CalendarKind::NoLeap,
        }
    }
}

/// `YYYY` or `YYYY-YYYY`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct YearSpan {
    pub first: i32,
    pub last: i32,
}

fn parse_years(text: &str) -> Result<YearSpan, String> {
    let bad = |_| format!("expected YEAR or YEAR-YEAR, got {text:?}");
    let (a, b) = match text.split_once('-') {
        Some((a, b)) => (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?),
        None => {
            let y = text.trim().parse().map_err(bad)?;
            (y, y)
        }
    };
    if a > b {
        return Err(format!("year range {a}-{b} is reversed"));
    }
    Ok(YearSpan { first: a, last: b })
}

#[derive(Args, Debug)]
pub struct CalendarArgs {
    /// Day axis of the daily shards.
    #[arg(long, value_enum, default_value = "noleap")]
    pub calendar: Calendar,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory written by `augment`.
    #[arg(long)]
    pub shards: PathBuf,
    /// Static GRD1 field appended to every input.
    #[arg(long = "static")]
    pub static_field: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training years; pairs whose windows reach past the last year are dropped.
    #[arg(long, value_parser = parse_years)]
    pub train_years: Option<YearSpan>,
    /// Held-out years for checkpoint selection.
    #[arg(long, value_parser = parse_years)]
    pub val_years: Option<YearSpan>,
    /// Restrict training to a subset of the augmented lags.
    #[arg(long, value_parser = parse_lags)]
    pub lags: Option<LagSet>,
    /// key=value training config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Sets the step count to ceil(epochs * pairs / batch).
    #[arg(long, conflicts_with = "steps")]
    pub epochs: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 4)]
    pub freq_blocks: usize,
    #[arg(long, default_value_t = 0.0)]
    pub softshrink: f64,
    #[command(flatten)]
    pub calendar: CalendarArgs,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// lag0 daily shard providing initial conditions.
    #[arg(long)]
    pub analysis: PathBuf,
    #[arg(long = "static")]
    pub static_field: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Initialize on the given weekdays of this year.
    #[arg(long, conflicts_with = "init_days")]
    pub year: Option<i32>,
    #[arg(long, default_value = "mon,thu")]
    pub weekdays: String,
    /// Explicit init day range `a..b` (day indices of the shard).
    #[arg(long)]
    pub init_days: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 7)]
    pub max_lead: usize,
    #[command(flatten)]
    pub calendar: CalendarArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Reference {
    Paper,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of `fc_*.grd` trajectories.
    #[arg(long)]
    pub forecasts: PathBuf,
    #[arg(long)]
    pub analysis: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "run")]
    pub run: String,
    /// Climatology years for ACC; ACC is omitted without them.
    #[arg(long, value_parser = parse_years)]
    pub clim_years: Option<YearSpan>,
    /// Also score a persistence forecast from the same init days.
    #[arg(long)]
    pub persistence: bool,
    #[arg(long, value_enum)]
    pub reference: Option<Reference>,
    #[command(flatten)]
    pub calendar: CalendarArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub reference: Option<Reference>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExperimentKind {
    Lag4x,
    Recency,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub kind: ExperimentKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(exit::USAGE);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Augment(a) => commands::augment(&a),
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Experiment(a) => commands::experiment(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::classify(&e))
        }
    }
}
