mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

/// Multi-agent diagnosis of deterioration patterns on stone surfaces.
#[derive(Debug, Parser)]
#[command(name = "stonediag", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Main configuration file.
    #[arg(long, global = true, default_value = "stonediag.toml")]
    pub config: PathBuf,
    /// Roster file, overriding the configured one.
    #[arg(long, global = true)]
    pub agents: Option<PathBuf>,
    /// Knowledge-base store file, overriding the configured one.
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    /// Run offline against a scripted transcript.
    #[arg(long, global = true)]
    pub mock_transcript: Option<PathBuf>,
    /// Output directory, overriding the configured one.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Chunks retrieved per agent.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Phase-2 speaking order as comma-separated specialist ids.
    #[arg(long, global = true, value_delimiter = ',')]
    pub order: Option<Vec<String>>,
    /// Cases run in parallel in batch mode.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Chunk, embed and store knowledge-base documents.
    KbIngest {
        #[arg(required = true)]
        documents: Vec<PathBuf>,
    },
    /// Run the agent team on one image or on every case of a corpus.
    Diagnose(commands::CaseArgs),
    /// Single request to the bare model with the same prompt, for comparison.
    Baseline(commands::CaseArgs),
    /// Score prediction sets against a ground-truth corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        /// `name=directory`; repeat once per system.
        #[arg(long = "predictions", required = true)]
        predictions: Vec<String>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_env("STONEDIAG_LOG").unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::KbIngest { documents } => commands::kb_ingest(&cli.global, &documents),
        Command::Diagnose(args) => commands::diagnose(&cli.global, &args),
        Command::Baseline(args) => commands::baseline(&cli.global, &args),
        Command::Eval {
            corpus,
            predictions,
        } => commands::eval(&cli.global, &corpus, &predictions),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
