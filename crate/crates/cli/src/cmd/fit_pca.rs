use std::path::{Path, PathBuf};

use kbnet_core::kernel::KernelPca;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::prepare_out_dir;

pub const PCA_FILE: &str = "pca_basis.tns";

/// Samples the configured kernel corpus, fits the basis and writes it to `out/pca_basis.tns`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let p = &cfg.pca;
    let pca = KernelPca::fit_seeded(p.corpus_size, p.t, p.width_range, p.seed)?;
    prepare_out_dir(out, cfg)?;
    let path = out.join(PCA_FILE);
    pca.save(&path)?;
    log::info!(
        "wrote {} (t = {}, fingerprint {})",
        path.display(),
        pca.t(),
        pca.fingerprint()
    );
    Ok(path)
}
