//! Joint optimisation of estimator and restorer.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use kbnet_core::image::RgbImage;
use kbnet_core::metrics::psnr;
use kbnet_core::synth::{derive_seed, BurstSample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::{make_batch, pack_burst, tensor_to_rgb, Batch};
use crate::error::{ModelError, Result};
use crate::loss::{kernel_loss, sr_loss};
use crate::network::KbNet;
use crate::optim::{Adam, AdamConfig};
use crate::params::namespace;

pub const METRICS_HEADER: &str = "step,epoch,lr,sr_loss,kernel_loss,val_psnr";
pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.tns";
pub const ESTIMATOR_NAMESPACE: &str = "est";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// SR loss plus weighted kernel loss.
    #[default]
    Joint,
    /// Kernel loss only; just the estimator runs and trains.
    KernelOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Epochs between learning-rate halvings.
    pub halve_every: u64,
    pub batch_size: usize,
    pub n_frames: usize,
    pub kernel_loss_weight: f64,
    pub epochs: u64,
    /// Stop early after this many optimiser steps in total.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub deterministic: bool,
    /// Raw crop side; must be even.
    pub crop: usize,
    /// Fraction of the dataset held out for validation when no separate set is given.
    pub val_fraction: f64,
    /// Validate every this many epochs (and after the last one).
    pub val_every: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub freeze_estimator: bool,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            halve_every: 100,
            batch_size: 4,
            n_frames: 8,
            kernel_loss_weight: 1.0,
            epochs: 50,
            max_steps: None,
            seed: 0,
            deterministic: false,
            crop: 32,
            val_fraction: 0.25,
            val_every: 5,
            checkpoint_every: 0,
            freeze_estimator: false,
            objective: Objective::Joint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.n_frames == 0 {
            return bad("batch_size, epochs and n_frames must be >= 1".into());
        }
        if self.halve_every == 0 || self.val_every == 0 {
            return bad("halve_every and val_every must be >= 1".into());
        }
        if self.crop == 0 || self.crop % 2 != 0 {
            return bad(format!("crop must be a positive even number, got {}", self.crop));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2) && self.eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        if self.kernel_loss_weight < 0.0 {
            return bad("kernel_loss_weight must be non-negative".into());
        }
        Ok(())
    }

    /// `lr · 0.5^⌊epoch / halve_every⌋`
    pub fn lr_at(&self, epoch: u64) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.halve_every) as i32)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.eps,
        }
    }
}

/// Whether the optimiser may update parameter `name` under `cfg`.
pub fn is_trainable(cfg: &TrainConfig, name: &str) -> bool {
    let est = namespace(name) == ESTIMATOR_NAMESPACE;
    match cfg.objective {
        Objective::KernelOnly => est && !cfg.freeze_estimator,
        Objective::Joint => !(est && cfg.freeze_estimator),
    }
}

/// Sets the thread-count variables read by the tensor backend so reductions run serially.
pub fn enable_deterministic() {
    std::env::set_var("RAYON_NUM_THREADS", "1");
    std::env::set_var("CANDLE_NUM_THREADS", "1");
}

/// Splits off the last `fraction` of samples (at least one when fraction > 0).
pub fn split_holdout(mut samples: Vec<BurstSample>, fraction: f64) -> (Vec<BurstSample>, Vec<BurstSample>) {
    if fraction <= 0.0 || samples.len() < 2 {
        return (samples, Vec::new());
    }
    let n_val = ((samples.len() as f64 * fraction).round() as usize).clamp(1, samples.len() - 1);
    let val = samples.split_off(samples.len() - n_val);
    (samples, val)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub sr: f64,
    pub kernel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub sr_loss: f64,
    pub kernel_loss: f64,
    pub val_psnr: Option<f64>,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let val = self.val_psnr.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{},{:e},{:.8},{:.8e},{}",
            self.step, self.epoch, self.lr, self.sr_loss, self.kernel_loss, val
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub step_losses: Vec<StepLosses>,
    pub epochs: Vec<EpochLog>,
}

/// Squared L2 norm of the gradient per namespace; parameters without a gradient count as zero.
pub fn gradient_norms(net: &KbNet, grads: &GradStore) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (name, var) in net.params().iter() {
        let g = match grads.get(var.as_tensor()) {
            Some(g) => g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?,
            None => 0.0,
        };
        *out.entry(namespace(name).to_string()).or_insert(0.0) += g;
    }
    Ok(out)
}

pub struct Trainer {
    pub net: KbNet,
    pub cfg: TrainConfig,
    pub adam: Adam,
    /// Optimiser steps taken so far.
    pub step: u64,
    /// Epochs completed so far.
    pub epoch: u64,
    train: Vec<BurstSample>,
    val: Vec<BurstSample>,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(net: KbNet, cfg: TrainConfig, train: Vec<BurstSample>, val: Vec<BurstSample>) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(ModelError::Config("training set is empty".into()));
        }
        if cfg.objective == Objective::KernelOnly && net.estimator.is_none() {
            return Err(ModelError::Config(
                "kernel-only training needs a model with an estimator".into(),
            ));
        }
        let adam = Adam::new(cfg.adam());
        Ok(Self {
            net,
            adam,
            cfg,
            step: 0,
            epoch: 0,
            train,
            val,
            out_dir: None,
        })
    }

    /// Continues from saved progress and optimiser moments.
    pub fn resume_from(mut self, adam: Option<Adam>, step: u64, epoch: u64) -> Self {
        if let Some(a) = adam {
            self.adam = a;
            self.adam.config = self.cfg.adam();
        }
        self.step = step;
        self.epoch = epoch;
        self
    }

    /// Enables the metrics CSV and checkpoints under `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn train_set(&self) -> &[BurstSample] {
        &self.train
    }

    pub fn val_set(&self) -> &[BurstSample] {
        &self.val
    }

    /// Loss tensor and its parts for one batch.
    pub fn losses(&self, batch: &Batch) -> Result<(Tensor, StepLosses)> {
        let (b, n, c, h, w) = batch.burst.dims5()?;
        let (total, sr, kernel) = match self.cfg.objective {
            Objective::KernelOnly => {
                let k = self.net.estimate_kernels(&batch.burst.reshape((b * n, c, h, w))?)?;
                let kl = kernel_loss(&k, &batch.kernels.reshape((b * n, k.dim(1)?))?)?;
                (kl.clone(), None, Some(kl))
            }
            Objective::Joint => {
                let out = self.net.forward(&batch.burst)?;
                let sr = sr_loss(&out.sr, &batch.hr)?;
                let kl = match &out.kernels {
                    Some(k) => Some(kernel_loss(&k.reshape(batch.kernels.dims())?, &batch.kernels)?),
                    None => None,
                };
                let total = match &kl {
                    Some(kl) if !self.cfg.freeze_estimator && self.cfg.kernel_loss_weight > 0.0 => {
                        (&sr + (kl * self.cfg.kernel_loss_weight)?)?
                    }
                    _ => sr.clone(),
                };
                (total, Some(sr), kl)
            }
        };
        let scalar = |t: &Option<Tensor>| -> Result<f64> {
            Ok(match t {
                Some(t) => t.to_dtype(DType::F64)?.to_scalar::<f64>()?,
                None => 0.0,
            })
        };
        let parts = StepLosses {
            total: total.to_dtype(DType::F64)?.to_scalar::<f64>()?,
            sr: scalar(&sr)?,
            kernel: scalar(&kernel)?,
        };
        Ok((total, parts))
    }

    /// Gradients of the configured objective on one batch, without updating.
    pub fn gradients(&self, batch: &Batch) -> Result<GradStore> {
        Ok(self.losses(batch)?.0.backward()?)
    }

    fn step_on(&mut self, batch: &Batch, lr: f64, batch_seed: u64) -> Result<StepLosses> {
        let (loss, parts) = self.losses(batch)?;
        if !parts.total.is_finite() {
            log::error!("non-finite loss at step {}; batch seed {batch_seed}", self.step);
            return Err(ModelError::NonFinite {
                step: self.step,
                batch_seed,
            });
        }
        let grads = loss.backward()?;
        let cfg = &self.cfg;
        self.adam
            .step(self.net.params(), &grads, lr, |name| is_trainable(cfg, name))?;
        self.step += 1;
        Ok(parts)
    }

    /// Seed that fully determines the crops of one batch.
    pub fn batch_seed(&self, epoch: u64, index: u64) -> u64 {
        derive_seed(self.cfg.seed, epoch, index + 1)
    }

    /// Runs one epoch; returns `None` if the step budget was already exhausted.
    pub fn run_epoch(&mut self) -> Result<Option<(EpochLog, Vec<StepLosses>)>> {
        if self.cfg.max_steps.is_some_and(|m| self.step >= m) {
            return Ok(None);
        }
        let epoch = self.epoch;
        let lr = self.cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, epoch, 0)));
        let mut losses = Vec::new();
        for (i, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            if self.cfg.max_steps.is_some_and(|m| self.step >= m) {
                break;
            }
            let seed = self.batch_seed(epoch, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<&BurstSample> = chunk.iter().map(|&j| &self.train[j]).collect();
            let batch = make_batch(
                &samples,
                self.cfg.n_frames,
                Some(self.cfg.crop),
                &mut rng,
                self.net.dtype(),
                self.net.device(),
            )?;
            losses.push(self.step_on(&batch, lr, seed)?);
        }
        self.epoch += 1;
        let n = losses.len().max(1) as f64;
        let last_epoch = self.epoch >= self.cfg.epochs || self.cfg.max_steps.is_some_and(|m| self.step >= m);
        let val_psnr = if !self.val.is_empty()
            && self.cfg.objective == Objective::Joint
            && (self.epoch % self.cfg.val_every == 0 || last_epoch)
        {
            Some(self.validate()?)
        } else {
            None
        };
        let log = EpochLog {
            step: self.step,
            epoch: self.epoch,
            lr,
            sr_loss: losses.iter().map(|l| l.sr).sum::<f64>() / n,
            kernel_loss: losses.iter().map(|l| l.kernel).sum::<f64>() / n,
            val_psnr,
        };
        if let Some(dir) = &self.out_dir {
            append_metrics(&dir.join(METRICS_FILE), &log)?;
            if self.cfg.checkpoint_every > 0 && self.epoch % self.cfg.checkpoint_every == 0 {
                save_checkpoint(
                    dir.join(format!("epoch_{:04}.tns", self.epoch)),
                    &self.net,
                    Some(&self.adam),
                    self.step,
                    self.epoch,
                )?;
            }
        }
        Ok(Some((log, losses)))
    }

    /// Trains until `epochs` epochs (or `max_steps` steps) are complete, then
    /// writes the final checkpoint if an output directory is set.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        let mut outcome = TrainOutcome::default();
        while self.epoch < self.cfg.epochs {
            match self.run_epoch()? {
                Some((log, losses)) => {
                    log::info!("{}", log.csv_row());
                    outcome.step_losses.extend(losses);
                    outcome.epochs.push(log);
                }
                None => break,
            }
        }
        if let Some(dir) = &self.out_dir {
            save_checkpoint(
                dir.join(FINAL_CHECKPOINT),
                &self.net,
                Some(&self.adam),
                self.step,
                self.epoch,
            )?;
        }
        Ok(outcome)
    }

    /// Mean PSNR over the validation set with whole frames.
    pub fn validate(&self) -> Result<f64> {
        let mut total = 0.0;
        for s in &self.val {
            total += psnr(&restore(&self.net, s, self.cfg.n_frames)?, &s.hr, 1.0)?;
        }
        Ok(total / self.val.len() as f64)
    }
}

fn append_metrics(path: &Path, log: &EpochLog) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| kbnet_core::Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    text.push_str(&log.csv_row());
    text.push('\n');
    f.write_all(text.as_bytes())
        .map_err(|e| kbnet_core::Error::io(path, e))?;
    Ok(())
}

/// Restores one sample from its first `n_frames` whole frames.
pub fn restore(net: &KbNet, sample: &BurstSample, n_frames: usize) -> Result<RgbImage> {
    let n = n_frames.min(sample.n_frames());
    let burst = pack_burst(&sample.frames[..n], net.dtype(), net.device())?;
    tensor_to_rgb(&net.forward(&burst)?.sr)
}
