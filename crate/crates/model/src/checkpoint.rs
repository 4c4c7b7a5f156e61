//! Checkpoint files: parameters, optimiser moments, kernel basis and progress.
//!
//! Tensor names: `param.<name>`, `opt.m.<name>`, `opt.v.<name>`, `pca.mean`,
//! `pca.basis`. The `meta` block holds the model config, step, epoch and the
//! basis fingerprint.

use std::path::Path;

use candle_core::{DType, Device};
use kbnet_core::kernel::KernelPca;
use kbnet_core::tns::TensorContainer;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::network::KbNet;
use crate::optim::Adam;

pub const CHECKPOINT_KIND: &str = "kbnet_checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub step: u64,
    pub epoch: u64,
    pub pca_fingerprint: String,
    pub pca_corpus_seed: u64,
    pub pca_corpus_size: usize,
    pub toolkit_version: String,
}

pub struct LoadedCheckpoint {
    pub net: KbNet,
    pub adam: Option<Adam>,
    pub meta: CheckpointMeta,
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &KbNet, adam: Option<&Adam>, step: u64, epoch: u64) -> Result<()> {
    let pca = net.pca();
    let meta = CheckpointMeta {
        model: net.config().clone(),
        step,
        epoch,
        pca_fingerprint: pca.fingerprint(),
        pca_corpus_seed: pca.provenance.corpus_seed,
        pca_corpus_size: pca.provenance.corpus_size,
        toolkit_version: kbnet_core::TOOLKIT_VERSION.to_string(),
    };
    let mut c = TensorContainer::new();
    net.params().write_into(&mut c, "param.")?;
    if let Some(adam) = adam {
        adam.write_into(&mut c)?;
    }
    let pc = pca.to_container();
    for t in pc.tensors() {
        c.insert(format!("pca.{}", t.name), &t.shape, t.data.clone())?;
    }
    c.set_meta("kind", Value::from(CHECKPOINT_KIND));
    c.set_meta("checkpoint", serde_json::to_value(&meta).expect("plain struct"));
    c.write(path)?;
    Ok(())
}

fn read_meta(c: &TensorContainer, path: &Path) -> Result<CheckpointMeta> {
    if c.meta().get("kind").and_then(Value::as_str) != Some(CHECKPOINT_KIND) {
        return Err(ModelError::checkpoint(path, "not a model checkpoint"));
    }
    let raw = c
        .meta()
        .get("checkpoint")
        .ok_or_else(|| ModelError::checkpoint(path, "missing checkpoint metadata"))?;
    serde_json::from_value(raw.clone()).map_err(|e| ModelError::checkpoint(path, e.to_string()))
}

fn read_pca(c: &TensorContainer, meta: &CheckpointMeta, path: &Path) -> Result<KernelPca> {
    let mut pc = TensorContainer::new();
    for name in ["mean", "basis"] {
        let t = c.require(&format!("pca.{name}"), None)?;
        pc.insert(name, &t.shape, t.data.clone())?;
    }
    pc.set_meta("t", Value::from(meta.model.embed_t));
    pc.set_meta("corpus_seed", Value::from(meta.pca_corpus_seed));
    pc.set_meta("corpus_size", Value::from(meta.pca_corpus_size));
    let pca = KernelPca::from_container(&pc, path)?;
    if pca.fingerprint() != meta.pca_fingerprint {
        return Err(ModelError::checkpoint(
            path,
            "stored kernel basis does not match its fingerprint",
        ));
    }
    Ok(pca)
}

/// Reads only the metadata block.
pub fn checkpoint_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    read_meta(&TensorContainer::read(path)?, path)
}

/// Restores a model (and optimiser state when present). If `expected_pca` is
/// given, its fingerprint must match the basis the checkpoint was trained with.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected_pca: Option<&KernelPca>,
    dtype: DType,
    device: Device,
) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let c = TensorContainer::read(path)?;
    let meta = read_meta(&c, path)?;
    if let Some(expected) = expected_pca {
        let found = expected.fingerprint();
        if found != meta.pca_fingerprint {
            return Err(ModelError::PcaMismatch {
                expected: meta.pca_fingerprint.clone(),
                found,
            });
        }
    }
    let pca = read_pca(&c, &meta, path)?;
    let net = KbNet::new(meta.model.clone(), pca, 0, dtype, device)?;
    net.params().read_from(&c, "param.")?;
    let adam = if c.meta().contains_key("opt_t") {
        Some(Adam::read_from(&c, net.params())?)
    } else {
        None
    };
    Ok(LoadedCheckpoint { net, adam, meta })
}
