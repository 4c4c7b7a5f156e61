use candle_core::{DType, Device, Tensor};
use kbnet_core::kernel::{KernelPca, KERNEL_LEN, KERNEL_SIZE};

use crate::akab::Akab;
use crate::align::{fuse, AlignOutput, Aligner};
use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::estimator::Estimator;
use crate::layers::{lrelu, Conv, ResBlock};
use crate::params::ParamStore;
use crate::recon::Reconstructor;

#[derive(Debug, Clone)]
pub enum FeatureBlock {
    KernelAware(Akab),
    Plain(ResBlock),
}

/// Shared per-frame feature extractor.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub head: Conv,
    pub blocks: Vec<FeatureBlock>,
}

impl FeatureExtractor {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.base_channels;
        let blocks = (0..cfg.n_akab)
            .map(|i| {
                let name = format!("feat.block{i}");
                Ok(if cfg.use_akab {
                    FeatureBlock::KernelAware(Akab::new(ps, &name, c, cfg.embed_t)?)
                } else {
                    FeatureBlock::Plain(ResBlock::new(ps, &name, c)?)
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            head: Conv::new(ps, "feat.head", 4, c, 3, 1)?,
            blocks,
        })
    }

    pub fn forward(&self, frames: &Tensor, emb: Option<&Tensor>) -> Result<Tensor> {
        let mut x = lrelu(&self.head.forward(frames)?)?;
        for b in &self.blocks {
            x = match (b, emb) {
                (FeatureBlock::KernelAware(a), Some(e)) => a.forward(&x, e)?,
                (FeatureBlock::KernelAware(_), None) => {
                    return Err(ModelError::Shape("kernel-aware features need embeddings".into()))
                }
                (FeatureBlock::Plain(r), _) => r.forward(&x)?,
            };
        }
        Ok(x)
    }
}

/// PCA basis as constant tensors.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    pub pca: KernelPca,
    /// 1×961
    mean: Tensor,
    /// 961×t
    basis_t: Tensor,
}

impl KernelBasis {
    fn new(pca: KernelPca, dtype: DType, device: &Device) -> Result<Self> {
        if pca.dim() != KERNEL_LEN {
            return Err(ModelError::Config(format!(
                "kernel basis has dimension {}, expected {KERNEL_LEN}",
                pca.dim()
            )));
        }
        let mean = Tensor::from_slice(pca.mean(), (1, KERNEL_LEN), device)?.to_dtype(dtype)?;
        let basis_t = Tensor::from_slice(pca.basis(), (pca.t(), KERNEL_LEN), device)?
            .t()?
            .contiguous()?
            .to_dtype(dtype)?;
        Ok(Self { pca, mean, basis_t })
    }

    /// B×961 kernels → B×t embeddings.
    pub fn project(&self, kernels: &Tensor) -> Result<Tensor> {
        Ok(kernels.broadcast_sub(&self.mean)?.matmul(&self.basis_t)?)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// B×3×(s·h)×(s·w) sRGB.
    pub sr: Tensor,
    /// B×N×31×31, present when the model has an estimator.
    pub kernels: Option<Tensor>,
    /// B×N×t embeddings actually fed to the restorer.
    pub embeddings: Option<Tensor>,
    pub offsets: Vec<Tensor>,
}

/// Shallow sub-pixel path from the packed reference frame straight to the
/// output grid, added to the restorer output. Its last conv starts at zero.
#[derive(Debug, Clone)]
pub struct ReferenceSkip {
    hidden: Conv,
    out: Conv,
    factor: usize,
}

impl ReferenceSkip {
    /// `factor` is the upsampling from packed resolution, 2·scale.
    pub fn new(ps: &mut ParamStore, name: &str, c: usize, factor: usize) -> Result<Self> {
        Ok(Self {
            hidden: Conv::new(ps, &format!("{name}.hidden"), 4, c, 3, 1)?,
            out: Conv::zeroed(ps, &format!("{name}.out"), c, 3 * factor * factor, 3)?,
            factor,
        })
    }

    pub fn forward(&self, reference: &Tensor) -> Result<Tensor> {
        let x = self.out.forward(&lrelu(&self.hidden.forward(reference)?)?)?;
        Ok(candle_nn::ops::pixel_shuffle(&x, self.factor)?)
    }
}

/// Kernel estimator plus restorer.
pub struct KbNet {
    config: ModelConfig,
    params: ParamStore,
    basis: KernelBasis,
    pub estimator: Option<Estimator>,
    pub features: FeatureExtractor,
    pub aligner: Aligner,
    pub recon: Reconstructor,
    pub skip: Option<ReferenceSkip>,
}

impl KbNet {
    pub fn new(config: ModelConfig, pca: KernelPca, seed: u64, dtype: DType, device: Device) -> Result<Self> {
        config.validate()?;
        if pca.t() != config.embed_t {
            return Err(ModelError::Config(format!(
                "embed_t = {} but the kernel basis has {} components",
                config.embed_t,
                pca.t()
            )));
        }
        let basis = KernelBasis::new(pca, dtype, &device)?;
        let mut ps = ParamStore::new(seed, dtype, device);
        let c = config.base_channels;
        let estimator = if config.has_estimator() {
            Some(Estimator::new(&mut ps, c, config.estimator_blocks)?)
        } else {
            None
        };
        let features = FeatureExtractor::new(&mut ps, &config)?;
        let aligner = Aligner::new(&mut ps, c, config.embed_t, config.levels(), config.use_kad)?;
        let recon = Reconstructor::new(&mut ps, c, config.n_rcab, config.use_rcab, config.upsample_stages())?;
        let skip = if config.reference_skip {
            Some(ReferenceSkip::new(&mut ps, "recon.skip", c, 2 * config.scale)?)
        } else {
            None
        };
        Ok(Self {
            config,
            params: ps,
            basis,
            estimator,
            features,
            aligner,
            recon,
            skip,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn pca(&self) -> &KernelPca {
        &self.basis.pca
    }

    pub fn basis(&self) -> &KernelBasis {
        &self.basis
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    fn check_burst(&self, burst: &Tensor) -> Result<(usize, usize, usize, usize)> {
        let (b, n, c, h, w) = burst.dims5()?;
        if c != 4 {
            return Err(ModelError::Shape(format!(
                "burst must be B×N×4×h×w packed raw, got {:?}",
                burst.dims()
            )));
        }
        if n == 0 || b == 0 {
            return Err(ModelError::Shape("empty burst".into()));
        }
        let m = self.config.raw_multiple() / 2;
        if h % m != 0 || w % m != 0 {
            return Err(ModelError::Shape(format!(
                "packed size {h}x{w} must be divisible by {m} (raw frames by {})",
                2 * m
            )));
        }
        Ok((b, n, h, w))
    }

    /// Packed frames B×4×h×w → kernels B×961.
    pub fn estimate_kernels(&self, frames: &Tensor) -> Result<Tensor> {
        match &self.estimator {
            Some(e) => e.forward(frames),
            None => Err(ModelError::Config("this model variant has no kernel estimator".into())),
        }
    }

    /// `burst` is B×N×4×h×w packed raw with frame 0 the reference.
    pub fn forward(&self, burst: &Tensor) -> Result<ForwardOutput> {
        let (b, n, h, w) = self.check_burst(burst)?;
        let flat = burst.reshape((b * n, 4, h, w))?;
        let (kernels, emb) = match &self.estimator {
            Some(est) => {
                let k = est.forward(&flat)?;
                // the restorer conditions on the estimate but does not train the estimator
                let e = self.basis.project(&k.detach())?;
                (Some(k), Some(e))
            }
            None => (None, None),
        };
        let feats = self.features.forward(&flat, emb.as_ref())?;
        let c = self.config.base_channels;
        let t = self.config.embed_t;
        let emb_bn = emb.as_ref().map(|e| e.reshape((b, n, t))).transpose()?;
        let AlignOutput { aligned, offsets } = self
            .aligner
            .forward(&feats.reshape((b, n, c, h, w))?, emb_bn.as_ref())?;
        let fused = fuse(&aligned.reshape((b, n, c, h, w))?)?;
        let mut sr = self.recon.forward(&fused)?;
        if let Some(skip) = &self.skip {
            let reference = burst.narrow(1, 0, 1)?.squeeze(1)?;
            sr = (sr + skip.forward(&reference)?)?;
        }
        Ok(ForwardOutput {
            sr,
            kernels: kernels
                .map(|k| k.reshape((b, n, KERNEL_SIZE, KERNEL_SIZE)))
                .transpose()?,
            embeddings: emb_bn,
            offsets,
        })
    }
}
