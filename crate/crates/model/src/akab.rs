//! Kernel-conditioned feature blocks.

use candle_core::{Tensor, D};

use crate::error::{ModelError, Result};
use crate::layers::{pool_channels, Conv, Linear, RESIDUAL_INIT_SCALE};
use crate::params::ParamStore;

/// B×t embeddings → B×t×H×W maps with every spatial column equal to the embedding.
pub fn stretch_embedding(emb: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, t) = emb.dims2()?;
    Ok(emb.reshape((b, t, 1, 1))?.broadcast_as((b, t, h, w))?.contiguous()?)
}

/// Residual block whose branch output is scaled and shifted per channel by
/// functions of its own pooled statistics and the kernel embedding:
/// `out = γ ⊙ f + β + x` with `f = conv(relu(conv(x)))`.
#[derive(Debug, Clone)]
pub struct Akab {
    pub conv1: Conv,
    pub conv2: Conv,
    pub scale1: Linear,
    pub scale2: Linear,
    pub shift1: Linear,
    pub shift2: Linear,
    embed_t: usize,
}

impl Akab {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize, embed_t: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(ps, &format!("{name}.conv1"), c, c, 3, 1)?,
            conv2: Conv::scaled(ps, &format!("{name}.conv2"), c, c, 3, 1, RESIDUAL_INIT_SCALE)?,
            scale1: Linear::new(ps, &format!("{name}.scale1"), c + embed_t, c)?,
            // zero second layers: γ = 0.5 and β = 0 at initialisation
            scale2: Linear::zeroed(ps, &format!("{name}.scale2"), c, c)?,
            shift1: Linear::new(ps, &format!("{name}.shift1"), c + embed_t, c)?,
            shift2: Linear::zeroed(ps, &format!("{name}.shift2"), c, c)?,
            embed_t,
        })
    }

    pub fn forward(&self, x: &Tensor, emb: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = x.dims4()?;
        if emb.dims2()? != (b, self.embed_t) {
            return Err(ModelError::Shape(format!(
                "kernel embedding {:?} does not match batch {b} and length {}",
                emb.dims(),
                self.embed_t
            )));
        }
        let f = self.conv2.forward(&self.conv1.forward(x)?.relu()?)?;
        let z = Tensor::cat(&[&pool_channels(&f)?, emb], D::Minus1)?;
        let gamma = candle_nn::ops::sigmoid(&self.scale2.forward(&self.scale1.forward(&z)?.relu()?)?)?;
        let beta = self.shift2.forward(&self.shift1.forward(&z)?.relu()?)?;
        let out = f
            .broadcast_mul(&gamma.reshape((b, c, 1, 1))?)?
            .broadcast_add(&beta.reshape((b, c, 1, 1))?)?;
        Ok((out + x)?)
    }
}
