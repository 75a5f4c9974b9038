//! Command-line front end of the `aotree` library: a file-based pipeline
//! (`synth` → `ingest` → `train` → `eval` / `explain` / `analyze`, plus the
//! `ablate` and `sweep` studies) driven by a flat key–value configuration.

pub mod commands;
pub mod config;
pub mod exit;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{RunConfig, KEYS};
use crate::exit::CliError;

#[derive(Debug, Parser)]
#[command(name = "aotree", version, about = "Aspect-order tree explainable recommendation")]
pub struct Cli {
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,

    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one config key; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted aspect orders.
    Synth,
    /// Filter and split the corpus; build importance matrices and trees.
    Ingest,
    /// Train the rating predictor.
    Train,
    /// Rating MSE and ranking nDCG of the trained model on each split.
    Eval,
    /// Write test-set explanations and score them against the reviews.
    Explain,
    /// Intra- versus inter-entity order consistency of the corpus.
    Analyze,
    /// Perturbation and variant ablation studies over repeated seeds.
    Ablate,
    /// Grid search over the `sweep.*` keys.
    Sweep,
    /// synth (when no corpus is configured), ingest, train, eval, explain, analyze.
    All,
    /// List config keys with their defaults.
    Keys,
}

pub fn keys_text() -> String {
    KEYS.iter()
        .map(|(k, v, doc)| {
            if doc.is_empty() {
                format!("{k} = {v}\n")
            } else {
                format!("{k} = {v}    # {doc}\n")
            }
        })
        .collect()
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.command == Command::Keys {
        print!("{}", keys_text());
        return Ok(());
    }
    let config = RunConfig::load(cli.out.clone(), cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::Synth => commands::synth(&config),
        Command::Ingest => commands::ingest(&config),
        Command::Train => commands::train(&config),
        Command::Eval => commands::eval(&config),
        Command::Explain => commands::explain(&config),
        Command::Analyze => commands::analyze(&config),
        Command::Ablate => commands::ablate(&config),
        Command::Sweep => commands::sweep(&config),
        Command::All => commands::all(&config),
        Command::Keys => unreachable!(),
    }
}
