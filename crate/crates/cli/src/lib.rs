//! The `oai` command line. Each subcommand reads declared input files,
//! writes its outputs plus a `manifest.json` into the output directory and
//! maps failures onto a fixed set of exit codes.

mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oai_core::matrix::ScenarioId;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub use commands::run;

/// Exit status for validation problems in the inputs (including missing files).
pub const EXIT_INPUT: i32 = 2;
/// Exit status when inputs are well-formed but a computation cannot proceed.
pub const EXIT_PRECONDITION: i32 = 3;
/// Exit status for failures writing outputs.
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Precondition(_) => EXIT_PRECONDITION,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "oai", version, about = "Occupational automation index pipeline")]
pub struct Cli {
    /// Write the bundled synthetic dataset into DIR and read inputs from it
    /// unless --data says otherwise. Without a subcommand, only writes it.
    #[arg(long, global = true, value_name = "DIR")]
    pub fixture: Option<PathBuf>,

    /// Directory holding inputs under their conventional names.
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "OAI_OUT_DIR", default_value = "oai-out", value_name = "DIR")]
    #[serde(skip)]
    pub out: PathBuf,

    /// Skip SVG plots.
    #[arg(long, global = true)]
    pub csv_only: bool,

    /// One of off, error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "warn")]
    #[serde(skip)]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Option<Command>,
}

impl Cli {
    /// Directory that relative default input names resolve against.
    pub fn input_dir(&self) -> PathBuf {
        self.data.clone().or_else(|| self.fixture.clone()).unwrap_or_else(|| PathBuf::from("."))
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Check the taxonomy files for structural and referential problems.
    Validate(TaxonomyArgs),
    /// Fuse per-model scores into fused.csv.
    Fuse(ScoresArgs),
    /// Occupation indices under one mapping matrix.
    Compute(ComputeArgs),
    /// Indices under all three preset matrices and their rank comparisons.
    Sensitivity(SensitivityArgs),
    /// Rank comparison of two existing oai.csv files.
    Compare(CompareArgs),
    /// Stratified random draw of DWAs for human review.
    Sample(SampleArgs),
    /// Human-review statistics: table2.csv and tests.json.
    Hitl(HitlArgs),
    /// Score DWAs against chat-completions endpoints.
    Score(ScoreArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Fuse(_) => "fuse",
            Command::Compute(_) => "compute",
            Command::Sensitivity(_) => "sensitivity",
            Command::Compare(_) => "compare",
            Command::Sample(_) => "sample",
            Command::Hitl(_) => "hitl",
            Command::Score(_) => "score",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TaxonomyArgs {
    #[arg(long, value_name = "FILE")]
    pub dwas: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub tasks: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub occupations: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub task_dwa: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoresArgs {
    /// Per-model scores; fused in memory unless --fused is given.
    #[arg(long, value_name = "FILE")]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FusedArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub scores: ScoresArgs,
    /// Previously fused scores. Takes precedence over --scores.
    #[arg(long, value_name = "FILE", conflicts_with = "scores")]
    pub fused: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioArg {
    Baseline,
    Aggressive,
    Conservative,
}

impl From<ScenarioArg> for ScenarioId {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Baseline => ScenarioId::Baseline,
            ScenarioArg::Aggressive => ScenarioId::Aggressive,
            ScenarioArg::Conservative => ScenarioId::Conservative,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ComputeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fused: FusedArgs,
    /// Preset mapping matrix.
    #[arg(long, value_enum, conflicts_with = "matrix")]
    pub scenario: Option<ScenarioArg>,
    /// Custom matrix as JSON: {"name": ..., "cells": [[T=0 row], ..., [T=3 row]]}.
    #[arg(long, value_name = "FILE")]
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SensitivityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fused: FusedArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    /// Reference table.
    pub a: PathBuf,
    /// Alternative table.
    pub b: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub fused: FusedArgs,
    /// Draws per stratum: consensus,slight_friction,severe_divergence.
    #[arg(long, default_value = "49,17,34", value_parser = parse_counts)]
    pub counts: [usize; 3],
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HitlArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub fused: FusedArgs,
    /// Human and model review ratings.
    #[arg(long, value_name = "FILE")]
    pub hitl: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long, value_name = "FILE")]
    pub dwas: Option<PathBuf>,
    /// JSON array of endpoint configurations.
    #[arg(long, value_name = "FILE")]
    pub endpoints: PathBuf,
    /// Requests in flight per endpoint.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
}

fn parse_counts(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated counts, got {s:?}"));
    }
    let mut out = [0; 3];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|_| format!("bad count {p:?}"))?;
    }
    Ok(out)
}

/// `explicit` if given, otherwise `name` inside `dir`.
pub(crate) fn resolve(explicit: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| dir.join(name))
}
