use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use kbnet_model::checkpoint::load_checkpoint;
use kbnet_model::train::{split_holdout, TrainOutcome, FINAL_CHECKPOINT};
use kbnet_model::{KbNet, Trainer, Variant};

use super::{apply_determinism, load_samples, open_dataset, require_file, resolve_pca};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::prepare_out_dir;

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub pca: Option<PathBuf>,
    pub variant: Option<Variant>,
}

/// Trains from scratch or resumes a checkpoint; writes `metrics.csv` and `final.tns` under `out`.
pub fn run(mut cfg: ExperimentConfig, args: &TrainArgs) -> Result<TrainOutcome> {
    if let Some(v) = args.variant {
        cfg.model = cfg.model.with_variant(v);
    }
    cfg.validate()?;
    apply_determinism(&mut cfg);

    let data = args
        .data
        .clone()
        .or_else(|| cfg.paths.data.clone())
        .ok_or_else(|| CliError::Validation("no training data: pass --data or set paths.data".into()))?;
    let ds = open_dataset(&data)?;
    if ds.manifest.synth.scale != cfg.model.scale {
        return Err(CliError::Validation(format!(
            "dataset scale {} does not match model scale {}",
            ds.manifest.synth.scale, cfg.model.scale
        )));
    }
    let val_ds = cfg.paths.val_data.as_deref().map(open_dataset).transpose()?;
    if let Some(r) = &args.resume {
        require_file(r, "checkpoint")?;
    }

    let (net, adam, step, epoch) = match &args.resume {
        Some(path) => {
            let expected = args.pca.as_deref().or(cfg.paths.pca.as_deref());
            let expected = expected.map(kbnet_core::kernel::KernelPca::load).transpose()?;
            let ck = load_checkpoint(path, expected.as_ref(), DType::F32, Device::Cpu)?;
            if ck.meta.model != cfg.model {
                log::warn!("resuming with the checkpoint's model block, not the config's");
                cfg.model = ck.meta.model.clone();
            }
            log::info!(
                "resuming {} at step {} epoch {}",
                path.display(),
                ck.meta.step,
                ck.meta.epoch
            );
            (ck.net, ck.adam, ck.meta.step, ck.meta.epoch)
        }
        None => {
            let pca = resolve_pca(&cfg, args.pca.as_deref())?;
            (
                KbNet::new(cfg.model.clone(), pca, cfg.train.seed, DType::F32, Device::Cpu)?,
                None,
                0,
                0,
            )
        }
    };

    let samples: Vec<_> = load_samples(&ds)?.into_iter().map(|(_, s)| s).collect();
    let (train, val) = match &val_ds {
        Some(v) => (samples, load_samples(v)?.into_iter().map(|(_, s)| s).collect()),
        None => split_holdout(samples, cfg.train.val_fraction),
    };
    log::info!("{} training and {} validation samples", train.len(), val.len());

    prepare_out_dir(&args.out, &cfg)?;
    let mut trainer = Trainer::new(net, cfg.train.clone(), train, val)?
        .resume_from(adam, step, epoch)
        .with_output(&args.out);
    let outcome = trainer.run()?;
    log::info!(
        "finished at step {}; checkpoint {}",
        trainer.step,
        args.out.join(FINAL_CHECKPOINT).display()
    );
    Ok(outcome)
}

pub fn final_checkpoint(out: &Path) -> PathBuf {
    out.join(FINAL_CHECKPOINT)
}
