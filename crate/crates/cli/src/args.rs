use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use exswitch::rl::{Schedule, UpdateMode};

use crate::config::{Boundary, ExperimentConfig, FamilyTag, GridSpec, TrainSpec, VerifySpec};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "exswitch",
    version,
    about = "Exploratory optimal switching: reference solvers and a model-free learner"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the exploratory system on a grid; optionally run policy
    /// iteration and a temperature sweep against the classical solution.
    Solve(SolveArgs),
    /// Train a value network against the built-in simulator.
    Train(TrainArgs),
    /// Run the acceptance suite and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config file (or a manifest from an earlier run).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyTag>,
    /// Model descriptor used with `--family custom-json`.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `NODES` or `NODESxSTEPS`, keeping the family's domain.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory. Defaults to `$EXSWITCH_OUTPUT_ROOT/<command>-<family>-seed<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated, strictly decreasing temperatures.
    #[arg(long, value_delimiter = ',')]
    pub lambda_sweep: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub boundary: Option<Boundary>,
    /// Skip policy iteration.
    #[arg(long)]
    pub no_iterate: bool,
    /// Run policy iteration even where the family default skips it.
    #[arg(long, conflicts_with = "no_iterate")]
    pub iterate: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<UpdateMode>,
    /// `constant:R`, `adam[:R]` or `robbins-monro:A,B,NU`.
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: Option<Schedule>,
    /// Time steps per episode.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Coarse regulator reference grid (61 × 50).
    #[arg(long)]
    pub coarse: bool,
    /// Comma-separated criterion numbers.
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<usize>>,
    /// Fraction of the Monte Carlo paths to use.
    #[arg(long)]
    pub mc_scale: Option<f64>,
}

fn parse_mode(s: &str) -> Result<UpdateMode, String> {
    s.parse().map_err(|e: exswitch::Error| e.to_string())
}

fn parse_schedule(s: &str) -> Result<Schedule, String> {
    Schedule::parse(s).map_err(|e| e.to_string())
}

pub fn parse_grid(s: &str) -> Result<(usize, Option<usize>), CliError> {
    let bad = || CliError::Config(format!("--grid expects NODES or NODESxSTEPS, got '{s}'"));
    let mut it = s.split('x');
    let nodes = it
        .next()
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(bad)?;
    let steps = match it.next() {
        Some(v) => Some(v.trim().parse().map_err(|_| bad())?),
        None => None,
    };
    if it.next().is_some() {
        return Err(bad());
    }
    Ok((nodes, steps))
}

impl CommonArgs {
    /// Defaults, then the config file, then these flags.
    pub fn layered(
        &self,
        flags: ExperimentConfig,
        command: &str,
    ) -> Result<crate::config::Resolved, CliError> {
        let file = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let mut flags = ExperimentConfig {
            family: self.family,
            model_file: self.model_file.clone(),
            lambda: self.lambda,
            seed: self.seed,
            out: self.out.clone(),
            ..flags
        };
        let merged_without_grid = ExperimentConfig::default()
            .overlay(file)
            .overlay(flags.clone());
        if let Some(g) = &self.grid {
            let (nodes, steps) = parse_grid(g)?;
            // keep the domain from the file or the family
            let base = merged_without_grid.resolve(command)?.grid;
            flags.grid = Some(GridSpec {
                nodes,
                steps: steps.unwrap_or(base.steps),
                ..base
            });
            return merged_without_grid.overlay(flags).resolve(command);
        }
        merged_without_grid.resolve(command)
    }
}

impl SolveArgs {
    pub fn flags(&self) -> ExperimentConfig {
        ExperimentConfig {
            lambda_sweep: self.lambda_sweep.clone(),
            boundary: self.boundary,
            iterate: if self.no_iterate {
                Some(false)
            } else if self.iterate {
                Some(true)
            } else {
                None
            },
            ..Default::default()
        }
    }
}

impl TrainArgs {
    pub fn flags(&self) -> ExperimentConfig {
        ExperimentConfig {
            train: TrainSpec {
                episodes: self.episodes,
                batch: self.batch,
                schedule: self.schedule,
                mode: self.mode,
                steps: self.steps,
                resume: self.resume.clone(),
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

impl VerifyArgs {
    pub fn flags(&self) -> ExperimentConfig {
        ExperimentConfig {
            verify: VerifySpec {
                coarse: self.coarse.then_some(true),
                only: self.only.clone(),
                mc_scale: self.mc_scale,
            },
            ..Default::default()
        }
    }
}
