//! Per-frame blur kernel estimator.

use candle_core::Tensor;
use kbnet_core::kernel::KERNEL_LEN;

use crate::error::{ModelError, Result};
use crate::layers::{lrelu, pool_channels, Conv, Linear, ResBlock};
use crate::params::ParamStore;

/// Stem conv → residual blocks → global pool → 961-way projection → softmax.
///
/// Pooling before the projection is the same map as a 1×1 projection followed by
/// pooling, at a fraction of the cost.
#[derive(Debug, Clone)]
pub struct Estimator {
    stem: Conv,
    blocks: Vec<ResBlock>,
    head: Linear,
}

impl Estimator {
    pub fn new(ps: &mut ParamStore, channels: usize, n_blocks: usize) -> Result<Self> {
        Ok(Self {
            stem: Conv::new(ps, "est.stem", 4, channels, 3, 1)?,
            blocks: (0..n_blocks)
                .map(|i| ResBlock::new(ps, &format!("est.block{i}"), channels))
                .collect::<Result<_>>()?,
            head: Linear::new(ps, "est.head", channels, KERNEL_LEN)?,
        })
    }

    /// Packed frames B×4×h×w → flattened kernels B×961 on the simplex.
    pub fn forward(&self, frames: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = frames.dims4()?;
        if c != 4 {
            return Err(ModelError::Shape(format!(
                "estimator expects 4 packed channels, got {c}"
            )));
        }
        let mut x = lrelu(&self.stem.forward(frames)?)?;
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        let logits = self.head.forward(&pool_channels(&x)?)?;
        Ok(candle_nn::ops::softmax(&logits, 1)?)
    }
}
