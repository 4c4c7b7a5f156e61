//! Conversions between on-disk samples and network tensors.

use candle_core::{DType, Device, Tensor};
use kbnet_core::image::{RawImage, RgbImage};
use kbnet_core::kernel::{BlurKernel, KERNEL_LEN};
use kbnet_core::raw::pack_bayer;
use kbnet_core::synth::BurstSample;
use ndarray::Array3;
use rand::Rng;

use crate::error::{ModelError, Result};

/// Frames → 1×N×4×(h/2)×(w/2).
pub fn pack_burst(frames: &[RawImage], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = frames
        .first()
        .ok_or_else(|| ModelError::Shape("burst has no frames".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(frames.len() * h * w);
    for f in frames {
        if (f.height(), f.width()) != (h, w) {
            return Err(ModelError::Shape("burst frames differ in size".into()));
        }
        data.extend(pack_bayer(f).iter().copied());
    }
    Ok(Tensor::from_vec(data, (1, frames.len(), 4, h / 2, w / 2), device)?.to_dtype(dtype)?)
}

/// H×W×3 image → 3×H×W values.
pub fn rgb_to_chw(img: &RgbImage) -> Vec<f32> {
    img.data().view().permuted_axes([2, 0, 1]).iter().copied().collect()
}

/// 3×H×W (or 1×3×H×W) tensor → image, clamped to [0, 1].
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let t = if t.rank() == 4 { t.squeeze(0)? } else { t.clone() };
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(ModelError::Shape(format!("expected 3 channels, got {c}")));
    }
    let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let chw = Array3::from_shape_vec((3, h, w), v).expect("3·h·w values");
    Ok(RgbImage::new(chw.permuted_axes([1, 2, 0]).as_standard_layout().to_owned())?.clamp01())
}

pub fn kernels_to_rows(kernels: &[BlurKernel]) -> Vec<f32> {
    kernels
        .iter()
        .flat_map(|k| k.values().iter().map(|&v| v as f32))
        .collect()
}

/// A training batch of aligned raw crops, ground truth and kernels.
#[derive(Debug, Clone)]
pub struct Batch {
    /// B×N×4×(c/2)×(c/2)
    pub burst: Tensor,
    /// B×3×(s·c)×(s·c)
    pub hr: Tensor,
    /// B×N×961
    pub kernels: Tensor,
}

/// Crops every sample at a random even offset (same for all frames) and
/// stacks the first `n_frames` frames. `crop = None` keeps whole frames.
pub fn make_batch(
    samples: &[&BurstSample],
    n_frames: usize,
    crop: Option<usize>,
    rng: &mut impl Rng,
    dtype: DType,
    device: &Device,
) -> Result<Batch> {
    let mut bursts = Vec::new();
    let mut hrs = Vec::new();
    let mut kernels = Vec::new();
    let (mut ph, mut pw) = (0, 0);
    for s in samples {
        if s.n_frames() < n_frames {
            return Err(ModelError::Shape(format!(
                "sample has {} frames, need {n_frames}",
                s.n_frames()
            )));
        }
        let (fh, fw) = (s.frames[0].height(), s.frames[0].width());
        let scale = s.hr.height() / fh;
        let (ch, cw) = match crop {
            Some(c) => {
                if c % 2 != 0 || c > fh || c > fw {
                    return Err(ModelError::Shape(format!("crop {c} does not fit {fh}x{fw} frames")));
                }
                (c, c)
            }
            None => (fh, fw),
        };
        let top = 2 * rng.random_range(0..=(fh - ch) / 2);
        let left = 2 * rng.random_range(0..=(fw - cw) / 2);
        let frames = s.frames[..n_frames]
            .iter()
            .map(|f| f.crop(top, left, ch, cw))
            .collect::<kbnet_core::Result<Vec<_>>>()?;
        bursts.push(pack_burst(&frames, DType::F32, device)?);
        let hr = s.hr.crop(top * scale, left * scale, ch * scale, cw * scale)?;
        hrs.push(Tensor::from_vec(
            rgb_to_chw(&hr),
            (1, 3, ch * scale, cw * scale),
            device,
        )?);
        kernels.push(Tensor::from_vec(
            kernels_to_rows(&s.kernels[..n_frames]),
            (1, n_frames, KERNEL_LEN),
            device,
        )?);
        if (ph, pw) != (0, 0) && (ph, pw) != (ch, cw) {
            return Err(ModelError::Shape(
                "uncropped samples in one batch must share a size".into(),
            ));
        }
        (ph, pw) = (ch, cw);
    }
    Ok(Batch {
        burst: Tensor::cat(&bursts, 0)?.to_dtype(dtype)?,
        hr: Tensor::cat(&hrs, 0)?.to_dtype(dtype)?,
        kernels: Tensor::cat(&kernels, 0)?.to_dtype(dtype)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use kbnet_core::raw::IspConfig;
    use kbnet_core::scene::procedural_scene;
    use kbnet_core::synth::{synthesize_burst, SynthConfig};
    use rand::SeedableRng;

    #[test]
    fn crops_stay_registered_with_ground_truth() {
        let cfg = SynthConfig {
            n_frames: 3,
            ..SynthConfig::default()
        };
        let s = synthesize_burst(&procedural_scene(64, 64, 1), &cfg, &IspConfig::default(), 0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let b = make_batch(&[&s, &s], 2, Some(8), &mut rng, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(b.burst.dims(), &[2, 2, 4, 4, 4]);
        assert_eq!(b.hr.dims(), &[2, 3, 32, 32]);
        assert_eq!(b.kernels.dims(), &[2, 2, 961]);
        let full = make_batch(&[&s], 3, None, &mut rng, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(full.hr.dims(), &[1, 3, 64, 64]);
        let back = tensor_to_rgb(&full.hr.squeeze(0).unwrap()).unwrap();
        assert_eq!(back, s.hr);
    }
}
