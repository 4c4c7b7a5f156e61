//! Deformable alignment of every frame's features onto the reference frame.

use candle_core::{Tensor, D};
use kbnet_core::deform::TAPS;

use crate::akab::stretch_embedding;
use crate::error::{ModelError, Result};
use crate::layers::{lrelu, Conv};
use crate::ops::{deform_conv2d, resize_bilinear};
use crate::params::ParamStore;

/// Two convolutions mapping concatenated reference/frame features (and optionally
/// degradation maps and coarser offsets) to 18 offset channels.
#[derive(Debug, Clone)]
pub struct OffsetPredictor {
    pub conv1: Conv,
    /// Zero-initialised, so alignment starts as a plain convolution.
    pub conv2: Conv,
}

impl OffsetPredictor {
    fn new(ps: &mut ParamStore, name: &str, c_in: usize, c: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(ps, &format!("{name}.conv1"), c_in, c, 3, 1)?,
            conv2: Conv::zeroed(ps, &format!("{name}.conv2"), c, 2 * TAPS, 3)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv2.forward(&lrelu(&self.conv1.forward(x)?)?)
    }
}

/// Offset predictor plus the deformable convolution it drives.
#[derive(Debug, Clone)]
pub struct AlignLevel {
    pub offsets: OffsetPredictor,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct AlignOutput {
    /// (B·N)×C×H×W, frames of each burst contiguous.
    pub aligned: Tensor,
    /// Offset field per level, finest first.
    pub offsets: Vec<Tensor>,
}

/// Single-level or coarse-to-fine pyramid alignment.
#[derive(Debug, Clone)]
pub struct Aligner {
    pub levels: Vec<AlignLevel>,
    /// Stride-2 convolutions producing level l from level l-1.
    pub downs: Vec<Conv>,
    /// 1×1 fusion of the upsampled level outputs; absent for one level.
    pub fusion: Option<Conv>,
    kernel_aware: bool,
}

impl Aligner {
    pub fn new(ps: &mut ParamStore, c: usize, embed_t: usize, n_levels: usize, kernel_aware: bool) -> Result<Self> {
        let mut levels = Vec::with_capacity(n_levels);
        for l in 0..n_levels {
            let mut c_in = 2 * c;
            if kernel_aware {
                c_in += 2 * embed_t;
            }
            if l + 1 < n_levels {
                c_in += 2 * TAPS;
            }
            let bound = 1.0 / ((c * 9) as f64).sqrt();
            levels.push(AlignLevel {
                offsets: OffsetPredictor::new(ps, &format!("align.level{l}.offset"), c_in, c)?,
                weight: ps.uniform(format!("align.level{l}.dconv.weight"), &[c, c, 3, 3], bound)?,
                bias: ps.uniform(format!("align.level{l}.dconv.bias"), &[c], bound)?,
            });
        }
        let downs = (1..n_levels)
            .map(|l| Conv::new(ps, &format!("align.down{l}"), c, c, 3, 2))
            .collect::<Result<_>>()?;
        let fusion = if n_levels > 1 {
            Some(Conv::new(ps, "align.fusion", n_levels * c, c, 1, 1)?)
        } else {
            None
        };
        Ok(Self {
            levels,
            downs,
            fusion,
            kernel_aware,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// `feats` is B×N×C×H×W with frame 0 the reference; `emb` is B×N×t and is
    /// required when the aligner is kernel-aware.
    pub fn forward(&self, feats: &Tensor, emb: Option<&Tensor>) -> Result<AlignOutput> {
        let (b, n, c, h, w) = feats.dims5()?;
        let m = 1 << (self.n_levels() - 1);
        if h % m != 0 || w % m != 0 {
            return Err(ModelError::Shape(format!(
                "feature size {h}x{w} is not divisible by {m} for {} pyramid levels",
                self.n_levels()
            )));
        }
        let emb = match (self.kernel_aware, emb) {
            (true, Some(e)) => {
                let t = e.dim(D::Minus1)?;
                if e.dims3()? != (b, n, t) {
                    return Err(ModelError::Shape(format!(
                        "embeddings {:?} for a {b}x{n} burst",
                        e.dims()
                    )));
                }
                Some((e.reshape((b * n, t))?, broadcast_reference(e)?.reshape((b * n, t))?))
            }
            (true, None) => return Err(ModelError::Shape("kernel-aware alignment needs embeddings".into())),
            (false, _) => None,
        };

        let mut pyramid = vec![feats.reshape((b * n, c, h, w))?];
        for down in &self.downs {
            let next = lrelu(&down.forward(pyramid.last().unwrap())?)?;
            pyramid.push(next);
        }

        let mut outs = vec![None; self.n_levels()];
        let mut offsets = vec![None; self.n_levels()];
        let mut coarser: Option<Tensor> = None;
        for l in (0..self.n_levels()).rev() {
            let frames = &pyramid[l];
            let (_, _, hl, wl) = frames.dims4()?;
            let reference = broadcast_reference(&frames.reshape((b, n, c, hl, wl))?)?.reshape((b * n, c, hl, wl))?;
            let mut parts = vec![reference];
            let mut frame_parts = vec![frames.clone()];
            if let Some((e, e_ref)) = &emb {
                parts.push(stretch_embedding(e_ref, hl, wl)?);
                frame_parts.push(stretch_embedding(e, hl, wl)?);
            }
            parts.extend(frame_parts);
            if let Some(prev) = &coarser {
                // offsets are in pixels, so they double with resolution
                parts.push((resize_bilinear(prev, hl, wl)? * 2.0)?);
            }
            let level = &self.levels[l];
            let off = level.offsets.forward(&Tensor::cat(&parts, 1)?)?;
            outs[l] = Some(deform_conv2d(frames, &off, &level.weight, &level.bias)?);
            coarser = Some(off.clone());
            offsets[l] = Some(off);
        }
        let outs: Vec<Tensor> = outs.into_iter().map(Option::unwrap).collect();
        let aligned = match &self.fusion {
            Some(fusion) => {
                let up = outs
                    .iter()
                    .map(|o| resize_bilinear(o, h, w))
                    .collect::<Result<Vec<_>>>()?;
                fusion.forward(&Tensor::cat(&up, 1)?)?
            }
            None => outs.into_iter().next().unwrap(),
        };
        Ok(AlignOutput {
            aligned,
            offsets: offsets.into_iter().map(Option::unwrap).collect(),
        })
    }
}

/// B×N×… → B×N×… holding frame 0 in every slot.
fn broadcast_reference(x: &Tensor) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    Ok(x.narrow(1, 0, 1)?.broadcast_as(dims)?.contiguous()?)
}

/// Arithmetic mean over the frame axis of B×N×C×H×W.
pub fn fuse(aligned: &Tensor) -> Result<Tensor> {
    let (_, n, _, _, _) = aligned.dims5()?;
    if n == 0 {
        return Err(ModelError::Shape("cannot fuse an empty burst".into()));
    }
    Ok(aligned.mean(1)?)
}
