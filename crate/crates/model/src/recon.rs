//! Reconstruction trunk and pixel-shuffle upsampler.

use candle_core::Tensor;

use crate::error::Result;
use crate::layers::{lrelu, pool_channels, Conv, Linear, ResBlock, RESIDUAL_INIT_SCALE};
use crate::params::ParamStore;

pub const ATTENTION_REDUCTION: usize = 4;

/// Residual block with a channel-attention gate on the branch.
#[derive(Debug, Clone)]
pub struct Rcab {
    pub conv1: Conv,
    pub conv2: Conv,
    pub squeeze: Linear,
    pub excite: Linear,
}

impl Rcab {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        let mid = (c / ATTENTION_REDUCTION).max(1);
        Ok(Self {
            conv1: Conv::new(ps, &format!("{name}.conv1"), c, c, 3, 1)?,
            conv2: Conv::scaled(ps, &format!("{name}.conv2"), c, c, 3, 1, RESIDUAL_INIT_SCALE)?,
            squeeze: Linear::new(ps, &format!("{name}.squeeze"), c, mid)?,
            excite: Linear::new(ps, &format!("{name}.excite"), mid, c)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = x.dims4()?;
        let r = self.conv2.forward(&self.conv1.forward(x)?.relu()?)?;
        let gate = candle_nn::ops::sigmoid(
            &self
                .excite
                .forward(&self.squeeze.forward(&pool_channels(&r)?)?.relu()?)?,
        )?;
        Ok((r.broadcast_mul(&gate.reshape((b, c, 1, 1))?)? + x)?)
    }
}

#[derive(Debug, Clone)]
pub enum TrunkBlock {
    Attention(Rcab),
    Plain(ResBlock),
}

impl TrunkBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            TrunkBlock::Attention(b) => b.forward(x),
            TrunkBlock::Plain(b) => b.forward(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstructor {
    pub blocks: Vec<TrunkBlock>,
    pub body_tail: Conv,
    pub upsample: Vec<Conv>,
    pub tail: Conv,
}

impl Reconstructor {
    pub fn new(ps: &mut ParamStore, c: usize, n_blocks: usize, attention: bool, up_stages: usize) -> Result<Self> {
        let blocks = (0..n_blocks)
            .map(|i| {
                let name = format!("recon.block{i}");
                Ok(if attention {
                    TrunkBlock::Attention(Rcab::new(ps, &name, c)?)
                } else {
                    TrunkBlock::Plain(ResBlock::new(ps, &name, c)?)
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            body_tail: Conv::new(ps, "recon.body_tail", c, c, 3, 1)?,
            upsample: (0..up_stages)
                .map(|i| Conv::new(ps, &format!("recon.up{i}"), c, 4 * c, 3, 1))
                .collect::<Result<_>>()?,
            tail: Conv::scaled(ps, "recon.tail", c, 3, 3, 1, RESIDUAL_INIT_SCALE)?,
        })
    }

    /// B×C×h×w fused features → B×3×(2^stages·h)×(2^stages·w) sRGB.
    pub fn forward(&self, fused: &Tensor) -> Result<Tensor> {
        let mut x = fused.clone();
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        let mut x = (self.body_tail.forward(&x)? + fused)?;
        for up in &self.upsample {
            x = lrelu(&candle_nn::ops::pixel_shuffle(&up.forward(&x)?, 2)?)?;
        }
        self.tail.forward(&x)
    }
}
