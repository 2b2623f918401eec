//! Command-line front-end for `lure-core`.
//!
//! Exit codes: 0 on success, 2 for input or configuration problems, 1 for
//! failures while running.

mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::run;

#[derive(Debug)]
pub enum Failure {
    /// Bad or missing input, or invalid configuration.
    Input(anyhow::Error),
    /// Anything that went wrong after inputs were accepted.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lure",
    version,
    about = "Object-hallucination metrics, masking and revision pipelines"
)]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every randomized or backend-touching step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Object vocabulary file (`canonical: synonym, ...` per line); defaults to the built-in COCO list.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate inputs, then summarize them.
    IngestCheck(commands::IngestArgs),
    /// CHAIR_I / CHAIR_S against ground-truth objects.
    Chair(commands::ChairArgs),
    /// Co-occurrence, uncertainty and position scores, histograms and ratios.
    Factors(commands::FactorsArgs),
    /// Mask uncertain and late objects in generated descriptions.
    Mask(commands::MaskArgs),
    /// Mask, then send each description to the revisor backend.
    Revise(commands::ReviseArgs),
    /// Build revisor training records from ground-truth and generated captions.
    BuildDataset(commands::BuildDatasetArgs),
    /// Gaussian-model closed-form and Monte Carlo experiments.
    Theory(commands::TheoryArgs),
}
