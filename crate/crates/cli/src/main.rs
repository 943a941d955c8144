mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use charet::engine::{CalibrationMode, QuantileMode};
use charet::synth::SynthConfig;

use config::{Overrides, RunConfig};
use stages::Failure;

#[derive(Parser)]
#[command(
    name = "charet",
    version,
    about = "Character-centred emotion tracking over short stories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Import a release CSV (or a canonical corpus) and validate it.
    Ingest(Shared),
    /// Substitute pronouns with their antecedents.
    Coref(Shared),
    /// Label each character as actor or object per line.
    Roles(Shared),
    /// Query the backend and score every labelled pair.
    Infer(Shared),
    /// Fit per-emotion, per-role thresholds.
    Calibrate(Shared),
    /// Apply thresholds to the scores.
    Classify(Shared),
    /// Compare predictions with the gold labels.
    Evaluate(Shared),
    /// All stages in one process.
    Run(Shared),
    /// Write a synthetic corpus, its oracle and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        stories: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct Shared {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// fixture:<path>, synthetic:<path> or an http(s) endpoint.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<CalibrationMode>,
    #[arg(long)]
    quantile: Option<QuantileMode>,
    #[arg(long)]
    workers: Option<usize>,
    /// Canonical corpus to ingest.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    conllu: Option<PathBuf>,
    /// Release CSV files to ingest.
    #[arg(long, num_args = 1..)]
    release: Vec<PathBuf>,
}

fn parse_mode(s: &str) -> Result<CalibrationMode, String> {
    match s.parse::<CalibrationMode>()? {
        CalibrationMode::Fixed => Err("mode must be zero-shot or few-shot".into()),
        m => Ok(m),
    }
}

fn load(shared: Shared) -> Result<RunConfig, Failure> {
    let mut cfg = match &shared.config {
        Some(p) if !p.exists() => return Err(Failure::Missing(p.clone())),
        Some(p) => RunConfig::from_file(p).map_err(Failure::Invalid)?,
        None => RunConfig::default(),
    };
    cfg.apply(Overrides {
        out: shared.out,
        backend: shared.backend,
        cache: shared.cache,
        mode: shared.mode,
        quantile: shared.quantile,
        workers: shared.workers,
        corpus: shared.corpus,
        conllu: shared.conllu,
        release: shared.release,
    });
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    let (shared, stage): (Shared, fn(&RunConfig) -> stages::StageResult) = match command {
        Command::Synth { out, stories, seed } => {
            let config = SynthConfig {
                stories,
                seed,
                ..SynthConfig::default()
            };
            return stages::synth(&out, &config);
        }
        Command::Ingest(s) => (s, |c| stages::ingest(c).map(drop)),
        Command::Coref(s) => (s, |c| stages::coref(c).map(drop)),
        Command::Roles(s) => (s, stages::roles),
        Command::Infer(s) => (s, stages::infer),
        Command::Calibrate(s) => (s, stages::calibrate),
        Command::Classify(s) => (s, stages::classify),
        Command::Evaluate(s) => (s, stages::evaluate_stage),
        Command::Run(s) => (s, stages::run_all),
    };
    stage(&load(shared)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
