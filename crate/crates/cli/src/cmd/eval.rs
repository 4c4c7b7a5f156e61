use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use kbnet_core::kernel::KernelPca;
use kbnet_core::metrics::MetricReport;
use kbnet_model::checkpoint::load_checkpoint;
use kbnet_model::eval::{evaluate, evaluate_bicubic};
use serde::{Deserialize, Serialize};

use super::{apply_determinism, load_samples, open_dataset, require_file};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{prepare_out_dir, write_json, write_text};
use crate::plot::line_chart;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const BASELINE_JSON: &str = "baseline.json";
pub const BASELINE_CSV: &str = "baseline.csv";
pub const SUMMARY_JSON: &str = "run.json";
pub const FRAMES_CSV: &str = "psnr_vs_frames.csv";
pub const FRAMES_PNG: &str = "psnr_vs_frames.png";

/// What `report` needs to know about an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    /// Ablation letter, if the model matches one of the variants.
    pub variant: Option<char>,
    pub checkpoint: PathBuf,
    pub step: u64,
    pub dataset: PathBuf,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub frames: Vec<usize>,
    /// Basis the checkpoint must have been trained with.
    pub pca: Option<PathBuf>,
}

/// Evaluates the checkpoint for every frame count plus the bicubic baseline.
pub fn run(mut cfg: ExperimentConfig, args: &EvalArgs) -> Result<(MetricReport, MetricReport)> {
    apply_determinism(&mut cfg);
    if args.frames.is_empty() || args.frames.contains(&0) {
        return Err(CliError::Validation("--frames needs positive frame counts".into()));
    }
    require_file(&args.checkpoint, "checkpoint")?;
    let ds = open_dataset(&args.data)?;
    let max = *args.frames.iter().max().unwrap();
    if max > ds.manifest.synth.n_frames {
        return Err(CliError::Validation(format!(
            "dataset bursts have {} frames; cannot evaluate with {max}",
            ds.manifest.synth.n_frames
        )));
    }
    let expected = args
        .pca
        .as_deref()
        .or(cfg.paths.pca.as_deref())
        .map(KernelPca::load)
        .transpose()?;
    let ck = load_checkpoint(&args.checkpoint, expected.as_ref(), DType::F32, Device::Cpu)?;
    if ck.meta.model.scale != ds.manifest.synth.scale {
        return Err(CliError::Validation(format!(
            "checkpoint scale {} does not match dataset scale {}",
            ck.meta.model.scale, ds.manifest.synth.scale
        )));
    }
    cfg.model = ck.meta.model.clone();
    cfg.isp = ds.manifest.isp.clone();

    let samples = load_samples(&ds)?;
    let variant = ck.meta.model.variant().map(|v| v.letter());
    let label = match variant {
        Some(v) => format!("variant-{v}"),
        None => "custom".to_string(),
    };
    let mut frames = args.frames.clone();
    frames.sort_unstable();
    frames.dedup();
    let report = evaluate(&ck.net, &samples, &frames, &label, &cfg.hash())?;
    let baseline = evaluate_bicubic(&samples, &ds.manifest.isp)?;

    prepare_out_dir(&args.out, &cfg)?;
    write_report(&args.out, REPORT_CSV, REPORT_JSON, &report)?;
    write_report(&args.out, BASELINE_CSV, BASELINE_JSON, &baseline)?;
    let mut rows = String::from("n_frames,mean_psnr,mean_ssim\n");
    for a in &report.aggregate {
        rows.push_str(&format!("{},{:.6},{:.6}\n", a.n_frames, a.mean_psnr, a.mean_ssim));
    }
    write_text(&args.out.join(FRAMES_CSV), &rows)?;
    let curve: Vec<(f64, f64)> = report
        .aggregate
        .iter()
        .map(|a| (a.n_frames as f64, a.mean_psnr))
        .collect();
    line_chart(&args.out.join(FRAMES_PNG), &[curve])?;
    let base = &baseline.aggregate[0];
    write_json(
        &args.out.join(SUMMARY_JSON),
        &RunSummary {
            label,
            variant,
            checkpoint: args.checkpoint.clone(),
            step: ck.meta.step,
            dataset: args.data.clone(),
            baseline_psnr: base.mean_psnr,
            baseline_ssim: base.mean_ssim,
        },
    )?;
    for a in &report.aggregate {
        log::info!("N={}: PSNR {:.3} dB, SSIM {:.4}", a.n_frames, a.mean_psnr, a.mean_ssim);
    }
    log::info!("bicubic: PSNR {:.3} dB, SSIM {:.4}", base.mean_psnr, base.mean_ssim);
    Ok((report, baseline))
}

fn write_report(dir: &Path, csv: &str, json: &str, report: &MetricReport) -> Result<()> {
    write_text(&dir.join(csv), &report.to_csv())?;
    write_json(&dir.join(json), report)
}
