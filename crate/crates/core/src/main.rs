//! Command-line front end: one subcommand per pipeline stage, reproducible
//! from a config file plus overriding flags.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qspectra::pipeline::{self, ModelKind, PipelineError, RunConfig};

#[derive(Parser)]
#[command(
    name = "qspectra",
    version,
    about = "Optical descriptors from excitation spectra; classical vs quantum-kernel classifiers"
)]
struct Cli {
    /// Run configuration (TOML); built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for all run artifacts; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Allow writing into an existing output directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Generate the surrogate corpus, profiles, and dataset splits.
    Synth,
    /// Ingest an external descriptor CSV and split it.
    Ingest,
    /// Fit the feature pipeline on the train split and export ranked tables.
    Features,
    /// Train and evaluate one model on the prepared features.
    Train {
        /// One of: svm, qsvm-exact, qsvm-noisy, qnn.
        #[arg(value_parser = parse_model)]
        model: ModelKind,
    },
    /// Merge all trained-model reports into a comparison table.
    Report,
}

impl Command {
    fn stage(&self) -> String {
        match self {
            Command::Synth => "synth".into(),
            Command::Ingest => "ingest".into(),
            Command::Features => "features".into(),
            Command::Train { model } => format!("train-{model}"),
            Command::Report => "report".into(),
        }
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    match &cli.command {
        Command::Synth => pipeline::cmd_synth(&config, cli.force),
        Command::Ingest => pipeline::cmd_ingest(&config, cli.force),
        Command::Features => pipeline::cmd_features(&config),
        Command::Train { model } => pipeline::cmd_train(&config, *model),
        Command::Report => pipeline::cmd_report(&config).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", cli.command.stage());
            ExitCode::FAILURE
        }
    }
}
