use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sitcom_core::harness::{
    ablation_sweep, format_summary, run_experiment, summarize_file, train_to, write_csv, ExperimentConfig,
    ExperimentReport, ModelSpec, SummaryRow, SweepAxis,
};

/// Diffusion-based inverse-problem experiments at desk scale.
///
/// Relative output directories are placed under $SITCOM_OUTPUT_ROOT when it
/// is set. `run` and `sweep` exit with status 1 when a configured check
/// fails; failed sampler runs alone do not change the status.
#[derive(Parser)]
#[command(name = "sitcom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sampler on every problem of a config.
    Run { config: PathBuf },
    /// Run the config over one sweep axis.
    Sweep {
        config: PathBuf,
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
    },
    /// Train the config's MLP and write a checkpoint.
    Train {
        config: PathBuf,
        /// Destination; defaults to the checkpoint path in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute and print the summary of a results.csv.
    Report {
        results: PathBuf,
        /// Also write the summary as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_axis(s: &str) -> std::result::Result<SweepAxis, String> {
    s.parse().map_err(|e: sitcom_core::Error| e.to_string())
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn finish(report: ExperimentReport) -> ExitCode {
    print!("{}", format_summary(&report.summary));
    println!("{} runs, {} failed; outputs in {}", report.rows.len(), report.failures(), report.output_dir.display());
    for c in &report.checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{}] {}: {}", c.cell, c.check, c.detail);
    }
    if report.failed_checks().is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            Ok(finish(run_experiment(&cfg)?))
        }
        Command::Sweep { config, axis } => {
            let cfg = load(&config)?;
            Ok(finish(ablation_sweep(&cfg, axis)?))
        }
        Command::Train { config, out } => {
            let cfg = load(&config)?;
            let out = match (out, &cfg.model) {
                (Some(p), _) => p,
                (None, ModelSpec::Mlp { checkpoint: Some(p), .. }) => p.clone(),
                (None, ModelSpec::Mlp { .. }) => {
                    bail!("no --out given and the config names no checkpoint")
                }
                (None, ModelSpec::AnalyticGmm) => {
                    bail!("the analytic-gmm model has nothing to train")
                }
            };
            let report = train_to(&cfg, &out)?;
            let tail = &report.losses[report.losses.len().saturating_sub(100)..];
            let loss = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
            println!("trained {} iterations, mean loss of the last {} = {loss:.6}", report.losses.len(), tail.len());
            println!("checkpoint written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { results, out } => {
            let summary = summarize_file(&results).with_context(|| format!("reading {}", results.display()))?;
            print!("{}", format_summary(&summary));
            if let Some(out) = out {
                write_csv(&out, &summary, SummaryRow::HEADER)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
