use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use kbnet_core::dataset::{load_frames, Dataset, MANIFEST};
use kbnet_core::image::{save_gray8, save_png8, RawImage};
use kbnet_core::kernel::KERNEL_SIZE;
use kbnet_model::checkpoint::load_checkpoint;
use kbnet_model::data::{pack_burst, tensor_to_rgb};
use kbnet_model::KbNet;
use ndarray::Array2;

use super::{apply_determinism, require_file};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::prepare_out_dir;

pub const SR_PNG: &str = "sr.png";
pub const KERNELS_PNG: &str = "kernels.png";

#[derive(Debug, Clone)]
pub struct InferArgs {
    pub checkpoint: PathBuf,
    /// A sample directory holding `frames.tns`, or a whole dataset.
    pub burst_dir: PathBuf,
    pub out: PathBuf,
    /// Use only the first this many frames.
    pub frames: Option<usize>,
}

/// Writes `sr.png` and `kernels.png` per burst; a dataset gets one subdirectory per sample.
pub fn run(mut cfg: ExperimentConfig, args: &InferArgs) -> Result<Vec<PathBuf>> {
    apply_determinism(&mut cfg);
    require_file(&args.checkpoint, "checkpoint")?;
    if !args.burst_dir.is_dir() {
        return Err(CliError::Missing {
            what: "burst directory",
            path: args.burst_dir.clone(),
        });
    }
    let jobs: Vec<(PathBuf, PathBuf)> = if args.burst_dir.join(MANIFEST).exists() {
        let ds = Dataset::open(&args.burst_dir)?;
        (0..ds.len())
            .map(|i| (ds.sample_dir(i), args.out.join(&ds.manifest.samples[i].id)))
            .collect()
    } else {
        vec![(args.burst_dir.clone(), args.out.clone())]
    };
    let ck = load_checkpoint(&args.checkpoint, None, DType::F32, Device::Cpu)?;
    cfg.model = ck.meta.model.clone();
    prepare_out_dir(&args.out, &cfg)?;
    let mut written = Vec::new();
    for (src, dst) in jobs {
        let mut frames = load_frames(&src)?;
        if let Some(n) = args.frames {
            if n == 0 || n > frames.len() {
                return Err(CliError::Validation(format!(
                    "{} has {} frames, cannot use {n}",
                    src.display(),
                    frames.len()
                )));
            }
            frames.truncate(n);
        }
        std::fs::create_dir_all(&dst).map_err(|e| CliError::io(&dst, e))?;
        infer_burst(&ck.net, &frames, &dst)?;
        written.push(dst);
    }
    Ok(written)
}

fn infer_burst(net: &KbNet, frames: &[RawImage], out: &Path) -> Result<()> {
    let burst = pack_burst(frames, net.dtype(), net.device()).map_err(CliError::from)?;
    let fwd = net.forward(&burst)?;
    save_png8(&tensor_to_rgb(&fwd.sr)?, out.join(SR_PNG))?;
    match fwd.kernels {
        Some(k) => {
            let n = frames.len();
            let flat = k
                .to_dtype(DType::F32)
                .and_then(|t| t.flatten_all())
                .and_then(|t| t.to_vec1::<f32>());
            let flat = flat.map_err(kbnet_model::ModelError::from)?;
            save_gray8(kernel_mosaic(&flat, n).view(), out.join(KERNELS_PNG))?;
        }
        None => log::warn!("model has no kernel estimator; skipping {KERNELS_PNG}"),
    }
    log::info!("wrote {}", out.display());
    Ok(())
}

/// 1×N row of 31×31 tiles, each scaled so its peak is white.
pub fn kernel_mosaic(kernels: &[f32], n: usize) -> Array2<f32> {
    let ks = KERNEL_SIZE;
    let mut out = Array2::zeros((ks, ks * n));
    for (i, tile) in kernels.chunks_exact(ks * ks).take(n).enumerate() {
        let peak = tile.iter().copied().fold(0.0f32, f32::max).max(f32::MIN_POSITIVE);
        for (j, &v) in tile.iter().enumerate() {
            out[[j / ks, i * ks + j % ks]] = v / peak;
        }
    }
    out
}
