//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime
//! error, 3 gradient-check failure. Flag overrides strictly shadow config
//! file values, and the effective config is echoed into the output
//! directory in the same `key = value` grammar it was read from.

pub mod config;
pub mod gradsuite;
pub mod runner;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::diffcore::SimMetric;
use crate::error::Result;
use config::{resolve_output_dir, ExperimentConfig};
use runner::SweepGrid;

#[derive(Parser, Debug)]
#[command(
    name = "agcm",
    version,
    about = "Few-shot classification experiments: attentive proposal fusion with a cosine-margin loss"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train both stages for every seed and write run artifacts.
    Run(RunArgs),
    /// One-at-a-time ablation over fusion weight, distance, and margin.
    Sweep(SweepArgs),
    /// Compare every analytic gradient against central differences.
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic splits and write them as CSV.
    Datagen(DatagenArgs),
    /// Recompute metrics from a run directory's saved artifacts.
    Report(ReportArgs),
}

/// Flags shared by the experiment commands; each one shadows the matching
/// config key.
#[derive(Args, Debug, Default)]
pub struct OverrideArgs {
    /// Config file (`key = value` lines); defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (config key `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fusion weight (config key `adapt.alpha`).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Cosine margin (config key `adapt.margin`).
    #[arg(long)]
    pub margin: Option<f64>,
    /// Logit scale (config key `adapt.beta`).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Attention similarity: cosine, neg-euclidean, or pearson.
    #[arg(long)]
    pub metric: Option<String>,
    /// Shots per class in the support set (config key `adapt.k`).
    #[arg(long)]
    pub k: Option<usize>,
    /// Worker threads (config key `jobs`).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub overrides: OverrideArgs,
    /// Comma-separated fusion weights for the alpha block; 'none' skips it.
    #[arg(long)]
    pub alphas: Option<String>,
    /// Comma-separated similarity names for the distance block; 'none' skips it.
    #[arg(long)]
    pub metrics: Option<String>,
    /// Comma-separated margins for the margin block; 'none' skips it.
    #[arg(long)]
    pub margins: Option<String>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Seed for the random check instances.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Random instances per suite.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Damage one analytic gradient in the named suite (negative control).
    #[arg(long, hide = true)]
    pub corrupt_suite: Option<String>,
}

#[derive(Args, Debug)]
pub struct DatagenArgs {
    #[command(flatten)]
    pub overrides: OverrideArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directory holding seed_* artifact subdirectories.
    #[arg(long)]
    pub out: PathBuf,
}

/// Config file (or defaults) with flag overrides applied and validated.
pub fn effective_config(overrides: &OverrideArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &overrides.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &overrides.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(alpha) = overrides.alpha {
        cfg.alpha = alpha;
    }
    if let Some(margin) = overrides.margin {
        cfg.margin = margin;
    }
    if let Some(beta) = overrides.beta {
        cfg.beta = beta;
    }
    if let Some(metric) = &overrides.metric {
        cfg.metric = SimMetric::parse(metric)?;
    }
    if let Some(k) = overrides.k {
        cfg.k = k;
    }
    if let Some(jobs) = overrides.jobs {
        cfg.jobs = jobs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            part.trim().parse::<f64>().map_err(|_| {
                crate::error::AgcmError::InvalidConfig(format!("bad number '{part}' in list"))
            })
        })
        .collect()
}

fn parse_metric_list(s: &str) -> Result<Vec<SimMetric>> {
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',').map(|part| SimMetric::parse(part.trim())).collect()
}

/// Grid flags over the published defaults.
pub fn effective_grid(args: &SweepArgs) -> Result<SweepGrid> {
    let mut grid = SweepGrid::default();
    if let Some(s) = &args.alphas {
        grid.alphas = parse_f64_list(s)?;
    }
    if let Some(s) = &args.metrics {
        grid.metrics = parse_metric_list(s)?;
    }
    if let Some(s) = &args.margins {
        grid.margins = parse_f64_list(s)?;
    }
    Ok(grid)
}

fn config_phase_fail(err: crate::error::AgcmError) -> i32 {
    eprintln!("error: {err}");
    1
}

fn execute(result: Result<i32>) -> i32 {
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => {
            let cfg = match effective_config(&args.overrides) {
                Ok(cfg) => cfg,
                Err(e) => return config_phase_fail(e),
            };
            execute(runner::cmd_run(&cfg))
        }
        Command::Sweep(args) => {
            let cfg = match effective_config(&args.overrides) {
                Ok(cfg) => cfg,
                Err(e) => return config_phase_fail(e),
            };
            let grid = match effective_grid(&args) {
                Ok(grid) => grid,
                Err(e) => return config_phase_fail(e),
            };
            let cells = grid.cells(&cfg);
            if cells.is_empty() {
                eprintln!("error: sweep grid is empty");
                return 1;
            }
            for cell in &cells {
                if let Err(e) = cell.cfg.validate() {
                    eprintln!("error: cell {}: {e}", cell.dir_name());
                    return 1;
                }
            }
            execute(runner::cmd_sweep(&cfg, &cells))
        }
        Command::Gradcheck(args) => {
            if args.count == 0 {
                eprintln!("error: --count must be at least 1");
                return 1;
            }
            if let Some(name) = &args.corrupt_suite {
                if !gradsuite::SUITE_NAMES.contains(&name.as_str()) {
                    eprintln!(
                        "error: unknown suite '{name}' (expected one of {})",
                        gradsuite::SUITE_NAMES.join(", ")
                    );
                    return 1;
                }
            }
            gradsuite::cmd_gradcheck(args.seed, args.count, args.corrupt_suite.as_deref())
        }
        Command::Datagen(args) => {
            let cfg = match effective_config(&args.overrides) {
                Ok(cfg) => cfg,
                Err(e) => return config_phase_fail(e),
            };
            let seed = cfg.seeds[0];
            let out = resolve_output_dir(&cfg.output_dir);
            execute(runner::cmd_datagen(&cfg, seed, &out))
        }
        Command::Report(args) => execute(runner::cmd_report(&resolve_output_dir(&args.out))),
    }
}

/// Parses the process arguments and runs the command, returning the exit
/// code. Help and version requests exit 0; any other parse problem is a
/// usage error (exit 1).
pub fn main_entry() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => dispatch(cli),
        Err(err) => {
            use clap::error::ErrorKind;
            let usage_ok =
                matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = err.print();
            if usage_ok {
                0
            } else {
                1
            }
        }
    }
}
