use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use tinyaction::synthdata::Tier;
use tinyaction_cli::commands::{self, EvalArgs, FuseArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "tinyaction", version, about = "Long-tailed low-resolution action recognition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test datasets from a spec file.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Print per-split class counts.
        #[arg(long)]
        print_counts: bool,
    },
    /// Train a classifier on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the tier named in the config.
        #[arg(long)]
        tier: Option<Tier>,
        /// Flip-balance the training split at this tail quantile.
        #[arg(long)]
        balance: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a student against a teacher checkpoint's SR-tier scores.
    Distill {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tier: Option<Tier>,
        #[arg(long)]
        balance: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ensemble score files, calibrate thresholds and report metrics.
    Fuse {
        #[arg(long, num_args = 1.., required = true)]
        scores: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// Validation scores of the same members, in the same order.
        #[arg(long, num_args = 1.., required = true)]
        val_scores: Vec<PathBuf>,
        #[arg(long)]
        val_labels: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        /// Test labels; adds F1 to the output.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Also write the fused test scores.
        #[arg(long)]
        fused_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction file against labels.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Group map; enables group suppression.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        fallback_argmax: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full experiment described by a manifest.
    Pipeline {
        #[arg(long)]
        manifest: PathBuf,
        /// Run replicate seeds concurrently.
        #[arg(long)]
        parallel: bool,
    },
}

fn init_logging() -> Result<()> {
    let level = match std::env::var("TINYACTION_LOG").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => bail!("TINYACTION_LOG must be quiet, info or debug, not `{other}`"),
    };
    env_logger::Builder::new().filter_level(level).init();
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_logging()?;
    match cli.command {
        Command::GenData { spec, out, print_counts } => commands::gen_data(&spec, &out, print_counts),
        Command::Train { data, config, tier, balance, out } => commands::train(&TrainArgs {
            data: &data,
            config: config.as_deref(),
            tier,
            balance,
            out: &out,
        }),
        Command::Distill { data, teacher, config, tier, balance, out } => commands::distill(
            &TrainArgs {
                data: &data,
                config: config.as_deref(),
                tier,
                balance,
                out: &out,
            },
            &teacher,
        ),
        Command::Fuse { scores, weights, val_scores, val_labels, groups, labels, fused_out, out } => {
            commands::fuse(&FuseArgs {
                scores: &scores,
                weights: weights.as_deref(),
                val_scores: &val_scores,
                val_labels: &val_labels,
                groups: &groups,
                labels: labels.as_deref(),
                fused_out: fused_out.as_deref(),
                out: &out,
            })
        }
        Command::Eval { scores, labels, thresholds, groups, fallback_argmax, out } => {
            let value = commands::eval(&EvalArgs {
                scores: &scores,
                labels: &labels,
                thresholds: thresholds.as_deref(),
                groups: groups.as_deref(),
                fallback_argmax,
                out: out.as_deref(),
            })?;
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(())
        }
        Command::Pipeline { manifest, parallel } => {
            let report = commands::pipeline(&manifest, parallel)?;
            println!("{}", serde_json::to_string_pretty(&report["mean"])?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
