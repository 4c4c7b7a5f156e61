pub mod eval;
pub mod fit_pca;
pub mod gen_hr;
pub mod infer;
pub mod report;
pub mod synth;
pub mod train;

use std::path::Path;

use kbnet_core::dataset::Dataset;
use kbnet_core::kernel::KernelPca;
use kbnet_core::synth::BurstSample;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const DETERMINISTIC_ENV: &str = "KBN_DETERMINISTIC";

/// Applies deterministic mode when the config or `KBN_DETERMINISTIC=1` asks for it.
pub fn apply_determinism(cfg: &mut ExperimentConfig) {
    if std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1") {
        cfg.train.deterministic = true;
    }
    if cfg.train.deterministic {
        kbnet_model::train::enable_deterministic();
    }
}

/// Loads the basis from `path` (or `paths.pca`), or fits it from the `[pca]` block.
pub fn resolve_pca(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<KernelPca> {
    let pca = match path.or(cfg.paths.pca.as_deref()) {
        Some(p) => KernelPca::load(p)?,
        None => {
            log::info!("no basis given; fitting one from the [pca] block");
            let p = &cfg.pca;
            KernelPca::fit_seeded(p.corpus_size, p.t, p.width_range, p.seed)?
        }
    };
    if pca.t() != cfg.model.embed_t {
        return Err(CliError::Validation(format!(
            "basis has {} rows but model.embed_t is {}",
            pca.t(),
            cfg.model.embed_t
        )));
    }
    Ok(pca)
}

pub fn open_dataset(path: &Path) -> Result<Dataset> {
    if !path.is_dir() {
        return Err(CliError::Missing {
            what: "dataset directory",
            path: path.to_path_buf(),
        });
    }
    Ok(Dataset::open(path)?)
}

pub fn load_samples(ds: &Dataset) -> Result<Vec<(String, BurstSample)>> {
    (0..ds.len())
        .map(|i| Ok((ds.manifest.samples[i].id.clone(), ds.load(i)?)))
        .collect()
}

pub fn require_file(path: &Path, what: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Missing {
            what,
            path: path.to_path_buf(),
        })
    }
}
