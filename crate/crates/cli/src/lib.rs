//! Batch front end: every subcommand reads a scenario, computes, and writes
//! its artifacts plus a `manifest.jsonl` into the run directory.

pub mod commands;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use infomesh::refinement::Criterion;
use infomesh::{Error, Scenario};

#[derive(Debug, Parser)]
#[command(
    name = "infomesh",
    version,
    about = "Information-driven parameter meshes for source identification"
)]
pub struct Cli {
    /// Scenario file; defaults to the built-in experiment.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Noise seed, overriding the scenario.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory, overriding the scenario.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Permit synthesizing data on the inversion grid.
    #[arg(long, global = true)]
    pub allow_inverse_crime: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the true state and export it.
    Forward,
    /// Write synthetic detector data.
    Synthesize,
    /// Reconstruct the source on the initial mesh.
    Invert,
    /// Information content and density on the initial mesh.
    Info,
    /// Adaptive refinement driven by one criterion.
    RefineLoop {
        #[arg(long, default_value = "info", value_parser = parse_criterion)]
        criterion: Criterion,
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// Eigenvalues of the Schur matrix along a refinement sequence.
    Spectrum {
        #[arg(long, default_value = "info", value_parser = parse_criterion)]
        criterion: Criterion,
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// Finite-dimensional checks: Cramér-Rao chain, solve routes, posterior
    /// quadrature.
    FindimDemo,
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Process exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_scenario() {
        2
    } else if matches!(e, Error::Io(_)) {
        1
    } else {
        3
    }
}

/// Scenario with command-line overrides applied.
pub fn resolve_scenario(cli: &Cli) -> infomesh::Result<Scenario> {
    let mut s = match &cli.scenario {
        Some(p) => Scenario::load(p)?,
        None => Scenario::default(),
    };
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if let Some(out) = &cli.out {
        s.output = out.to_string_lossy().into_owned();
    }
    if cli.allow_inverse_crime {
        s.allow_inverse_crime = true;
    }
    s.validate()?;
    Ok(s)
}

/// Runs one invocation; returns the manifest path.
pub fn run(cli: &Cli) -> infomesh::Result<PathBuf> {
    let scn = resolve_scenario(cli)?;
    commands::execute(&cli.command, &scn)
}
