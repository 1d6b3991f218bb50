//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use mpslam_core::scenario::{load_scenario, Experiment, ExperimentToggles, ScenarioConfig};
use serde::Serialize;

use crate::output::emit_csv;
use crate::runner::run_batch;

#[derive(Debug, Parser)]
#[command(name = "mpslam", version, about = "Cooperative multipath-based SLAM experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a seeded Monte-Carlo batch and write CSV reports.
    Run(RunArgs),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExperimentChoice {
    Named(Experiment),
    Custom,
}

impl FromStr for ExperimentChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("custom") {
            return Ok(Self::Custom);
        }
        s.parse::<Experiment>()
            .map(Self::Named)
            .map_err(|_| format!("unknown experiment {s:?}; expected E1..E7 or custom"))
    }
}

fn flag(s: &str) -> Result<bool, String> {
    match s {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        _ => Err(format!("expected 0 or 1, got {s:?}")),
    }
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// E1..E7 or `custom`.
    #[arg(long)]
    pub experiment: ExperimentChoice,
    #[arg(long, value_parser = flag)]
    pub mimo: Option<bool>,
    #[arg(long, value_parser = flag)]
    pub coop: Option<bool>,
    #[arg(long, value_parser = flag)]
    pub imu: Option<bool>,
    #[arg(long, value_parser = flag)]
    pub fusion: Option<bool>,
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    /// Master seed; defaults to the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

impl RunArgs {
    /// Toggles of the named experiment, or the scenario's toggles overridden
    /// by the individual flags for `custom`.
    pub fn toggles(&self, base: ExperimentToggles) -> anyhow::Result<ExperimentToggles> {
        let flags = [self.mimo, self.coop, self.imu, self.fusion];
        match self.experiment {
            ExperimentChoice::Named(e) => {
                if flags.iter().any(Option::is_some) {
                    bail!("--mimo/--coop/--imu/--fusion require --experiment custom");
                }
                Ok(e.toggles())
            }
            ExperimentChoice::Custom => Ok(ExperimentToggles {
                mimo: self.mimo.unwrap_or(base.mimo),
                coop: self.coop.unwrap_or(base.coop),
                imu: self.imu.unwrap_or(base.imu),
                pva_fusion: self.fusion.unwrap_or(base.pva_fusion),
            }),
        }
    }
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    experiment: String,
    seed: u64,
    runs: u64,
    scenario_file: &'a Path,
    toggles: ExperimentToggles,
}

pub fn resolve(args: &RunArgs) -> anyhow::Result<(ScenarioConfig, u64)> {
    let text = fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading scenario {}", args.scenario.display()))?;
    let mut config = load_scenario(&text).with_context(|| format!("invalid scenario {}", args.scenario.display()))?;
    config.toggles = args.toggles(config.toggles)?;
    config.validate()?;
    let seed = args.seed.unwrap_or(config.seed);
    config.seed = seed;
    Ok((config, seed))
}

pub fn run(args: &RunArgs) -> anyhow::Result<()> {
    if args.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let (config, seed) = resolve(args)?;
    let records = run_batch(&config, seed, args.runs)?;
    emit_csv(&records, &args.out)?;
    fs::write(args.out.join("config.toml"), config.to_toml())
        .with_context(|| format!("writing {}", args.out.display()))?;
    let meta = Metadata {
        experiment: match &args.experiment {
            ExperimentChoice::Named(e) => e.name().to_string(),
            ExperimentChoice::Custom => "custom".to_string(),
        },
        seed,
        runs: args.runs,
        scenario_file: &args.scenario,
        toggles: config.toggles,
    };
    fs::write(args.out.join("metadata.toml"), toml::to_string(&meta)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let flags: usize = records.iter().map(|r| r.divergence_flags()).sum();
    eprintln!(
        "{} run(s) written to {} ({} divergence flag(s))",
        records.len(),
        args.out.display(),
        flags
    );
    Ok(())
}
