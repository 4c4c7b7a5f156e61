use std::path::Path;

use kbnet_core::image::save_png16;
use kbnet_core::scene::procedural_scene;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::prepare_out_dir;

/// Writes `count` procedural scenes of `height`×`width` as 16-bit PNGs.
pub fn run(cfg: &ExperimentConfig, out: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<()> {
    if count == 0 || height == 0 || width == 0 {
        return Err(CliError::Validation("count and image size must be positive".into()));
    }
    cfg.synth.check_hr_dims(height, width)?;
    prepare_out_dir(out, cfg)?;
    for i in 0..count {
        let img = procedural_scene(height, width, seed.wrapping_add(i as u64));
        save_png16(&img, out.join(format!("scene_{i:05}.png")))?;
    }
    log::info!("wrote {count} scenes to {}", out.display());
    Ok(())
}
