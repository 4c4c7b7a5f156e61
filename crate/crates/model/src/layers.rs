use candle_core::{Tensor, D};

use crate::error::Result;
use crate::params::ParamStore;

pub const LRELU_SLOPE: f64 = 0.1;

/// Initial weight scale of the last convolution inside a residual branch.
pub const RESIDUAL_INIT_SCALE: f64 = 0.1;

pub fn lrelu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, LRELU_SLOPE)?)
}

/// 2-D convolution with "same" padding for odd kernels.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv {
    /// He-uniform weights for a leaky-ReLU successor; bias uniform ±1/√fan_in.
    pub fn new(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<Self> {
        Self::scaled(ps, name, c_in, c_out, k, stride, 1.0)
    }

    /// As [`Conv::new`] with the weight bound multiplied by `scale`.
    pub fn scaled(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        scale: f64,
    ) -> Result<Self> {
        let fan_in = (c_in * k * k) as f64;
        let bound = (6.0 / ((1.0 + LRELU_SLOPE * LRELU_SLOPE) * fan_in)).sqrt();
        Ok(Self {
            weight: ps.uniform(format!("{name}.weight"), &[c_out, c_in, k, k], scale * bound)?,
            bias: ps.uniform(format!("{name}.bias"), &[c_out], 1.0 / fan_in.sqrt())?,
            stride,
        })
    }

    /// Weight and bias start at zero.
    pub fn zeroed(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        Ok(Self {
            weight: ps.zeros(format!("{name}.weight"), &[c_out, c_in, k, k])?,
            bias: ps.zeros(format!("{name}.bias"), &[c_out])?,
            stride: 1,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let k = self.weight.dim(2)?;
        let y = x.conv2d(&self.weight, k / 2, self.stride, 1, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Fully connected layer on B×in rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, n_in: usize, n_out: usize) -> Result<Self> {
        let bound = 1.0 / (n_in as f64).sqrt();
        Ok(Self {
            weight: ps.uniform(format!("{name}.weight"), &[n_out, n_in], bound)?,
            bias: ps.uniform(format!("{name}.bias"), &[n_out], bound)?,
        })
    }

    pub fn zeroed(ps: &mut ParamStore, name: &str, n_in: usize, n_out: usize) -> Result<Self> {
        Ok(Self {
            weight: ps.zeros(format!("{name}.weight"), &[n_out, n_in])?,
            bias: ps.zeros(format!("{name}.bias"), &[n_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// conv → act → conv with identity skip.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ResBlock {
    pub fn new(ps: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(ps, &format!("{name}.conv1"), c, c, 3, 1)?,
            conv2: Conv::scaled(ps, &format!("{name}.conv2"), c, c, 3, 1, RESIDUAL_INIT_SCALE)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv2.forward(&self.conv1.forward(x)?.relu()?)?;
        Ok((y + x)?)
    }
}

/// B×C×H×W → B×C.
pub fn pool_channels(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}
