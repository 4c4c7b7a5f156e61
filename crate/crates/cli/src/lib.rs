//! Command-line driver for the burst super-resolution toolkit.

pub mod cmd;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use kbnet_model::Variant;

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "kbnet", version, about = "Kernel-aware burst super-resolution toolkit")]
pub struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log level filter, e.g. info or debug.
    #[arg(long, global = true, default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the kernel-embedding basis from a sampled kernel corpus.
    FitPca {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write procedural HR scenes to use as ground truth.
    GenHr {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Image side (square) in pixels.
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Synthesise raw bursts from a directory of HR PNGs.
    Synth {
        #[arg(long)]
        hr_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Kernel-width band lo:hi for an evaluation set.
        #[arg(long, value_parser = cmd::synth::parse_band)]
        band: Option<(f64, f64)>,
        /// Overrides synth.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Basis file; fitted from the [pca] block when omitted.
        #[arg(long)]
        pca: Option<PathBuf>,
        /// Ablation variant A..E; overrides the model toggles.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Evaluate a checkpoint (and the bicubic baseline) on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frame counts, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "8")]
        frames: Vec<usize>,
        /// Basis the checkpoint must match.
        #[arg(long)]
        pca: Option<PathBuf>,
    },
    /// Restore bursts and render the estimated kernels.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        burst_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Tabulate and plot evaluation runs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?}; expected one of A, B, C, D, E"))
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::FitPca { out } => {
            cmd::fit_pca::run(&cfg, &out)?;
        }
        Command::GenHr { out, count, size, seed } => cmd::gen_hr::run(&cfg, &out, count, size, size, seed)?,
        Command::Synth {
            hr_dir,
            out,
            band,
            seed,
        } => {
            let mut cfg = cfg;
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            let hr_dir = hr_dir
                .or_else(|| cfg.paths.hr_dir.clone())
                .ok_or_else(|| error::CliError::Validation("no HR images: pass --hr-dir or set paths.hr_dir".into()))?;
            cmd::synth::run(&cfg, &hr_dir, &out, band)?;
        }
        Command::Train {
            data,
            out,
            resume,
            pca,
            variant,
        } => {
            let args = cmd::train::TrainArgs {
                data,
                out,
                resume,
                pca,
                variant,
            };
            cmd::train::run(cfg, &args)?;
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            frames,
            pca,
        } => {
            let args = cmd::eval::EvalArgs {
                checkpoint,
                data,
                out,
                frames,
                pca,
            };
            cmd::eval::run(cfg, &args)?;
        }
        Command::Infer {
            checkpoint,
            burst_dir,
            out,
            frames,
        } => {
            let args = cmd::infer::InferArgs {
                checkpoint,
                burst_dir,
                out,
                frames,
            };
            cmd::infer::run(cfg, &args)?;
        }
        Command::Report { runs, out } => {
            cmd::report::run(&cfg, &runs, &out)?;
        }
    }
    Ok(())
}
