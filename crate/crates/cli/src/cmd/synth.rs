use std::path::Path;

use kbnet_core::dataset::{load_hr_dir, write_dataset, Manifest};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::prepare_out_dir;

/// Parses `lo:hi`.
pub fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| format!("bad band bound {v:?}: {e}"))
    };
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if !(lo >= 0.0 && lo < hi) {
        return Err(format!("band must satisfy 0 <= lo < hi, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

/// Synthesises one burst per HR image; with a band, kernel widths are drawn from it.
pub fn run(cfg: &ExperimentConfig, hr_dir: &Path, out: &Path, band: Option<(f64, f64)>) -> Result<Manifest> {
    if !hr_dir.is_dir() {
        return Err(CliError::Missing {
            what: "HR image directory",
            path: hr_dir.to_path_buf(),
        });
    }
    let sources = load_hr_dir(hr_dir, cfg.synth.scale)?;
    prepare_out_dir(out, cfg)?;
    let manifest = write_dataset(&sources, &cfg.synth, &cfg.isp, band, out)?;
    log::info!("wrote {} samples to {}", manifest.samples.len(), out.display());
    Ok(manifest)
}
