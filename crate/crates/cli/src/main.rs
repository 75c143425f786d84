use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod manifest;

use commands::Ctx;
use config::{Loaded, Overrides};

#[derive(Debug, Parser)]
#[command(name = "mrfg", version, about = "User-level stance detection pipeline")]
struct Cli {
    /// Pipeline config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true, default_value = "mrfg.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    target: Option<String>,
    /// Fraction of ranked dimensions routed to the graph path.
    #[arg(long, global = true)]
    r: Option<f64>,
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Relevance filter: llm, cosine, mock or off.
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// Output directory, overriding paths.out_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted structure.
    Synth,
    /// Validate the corpus, write statistics and splits.
    Ingest,
    /// Score followee tweets for relevance.
    Filter,
    /// Rank feature dimensions by mutual information after propagation.
    Rank,
    /// Train one model on the ranked features.
    Train,
    /// Run the configured variant over all seeds.
    Eval,
    /// Run the ablation variants.
    Ablate,
    /// Sweep the routing ratio for each configured strategy.
    Sweep,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest => "ingest",
            Command::Filter => "filter",
            Command::Rank => "rank",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::Sweep => "sweep",
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    let flags = Overrides {
        seed: cli.seed,
        target: cli.target,
        r: cli.r,
        variant: cli.variant,
        strategy: cli.strategy,
        out: cli.out,
    };
    let loaded = Loaded::read(&cli.config, &flags)?;
    let ctx = Ctx {
        command: cli.command.name(),
        loaded,
        flags,
    };
    match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Ingest => commands::ingest(&ctx),
        Command::Filter => commands::filter(&ctx),
        Command::Rank => commands::rank(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Ablate => commands::ablate(&ctx),
        Command::Sweep => commands::sweep(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e:#}");
            println!("{}", serde_json::json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
