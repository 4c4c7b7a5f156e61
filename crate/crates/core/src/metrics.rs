//! PSNR / SSIM on sRGB images and the bicubic single-frame baseline.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::raw::{demosaic_naive, forward_isp, IspConfig};
use crate::synth::BurstSample;

/// Reported for identical images instead of +∞.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / n)
}

pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window_1d() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Grayscale by channel mean.
pub fn to_gray(img: &RgbImage) -> Array2<f64> {
    let (h, w) = img.dims();
    let d = img.data();
    Array2::from_shape_fn((h, w), |(y, x)| {
        (f64::from(d[[y, x, 0]]) + f64::from(d[[y, x, 1]]) + f64::from(d[[y, x, 2]])) / 3.0
    })
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(img: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let rows = Array2::from_shape_fn((h, ow), |(y, x)| (0..k).map(|j| g[j] * img[[y, x + j]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(y, x)| (0..k).map(|i| g[i] * rows[[y + i, x]]).sum::<f64>())
}

/// Single-scale SSIM (11×11 Gaussian, σ = 1.5, K1 = 0.01, K2 = 0.03) on channel-mean grayscale,
/// averaged over all fully contained windows.
pub fn ssim(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let (x, y) = (to_gray(a), to_gray(b));
    let g = gaussian_window_1d();
    let mu_x = filter_valid(&x, &g);
    let mu_y = filter_valid(&y, &g);
    let xx = filter_valid(&(&x * &x), &g);
    let yy = filter_valid(&(&y * &y), &g);
    let xy = filter_valid(&(&x * &y), &g);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut total = 0.0;
    for ((((&mx, &my), &sxx), &syy), &sxy) in mu_x.iter().zip(&mu_y).zip(&xx).zip(&yy).zip(&xy) {
        let vx = sxx - mx * mx;
        let vy = syy - my * my;
        let cov = sxy - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Keys bicubic (a = -0.5) upsampling by `s` with clamped borders.
///
/// Output pixel X reads input coordinate X / s, matching the decimation grid where
/// low-resolution pixel i sits on high-resolution pixel s·i.
pub fn bicubic_upsample(img: &RgbImage, s: usize) -> RgbImage {
    let (h, w) = img.dims();
    let d = img.data();
    let taps = |pos: f64, n: usize| -> [(usize, f64); 4] {
        let base = pos.floor();
        let frac = pos - base;
        std::array::from_fn(|k| {
            let idx = (base as isize + k as isize - 1).clamp(0, n as isize - 1) as usize;
            (idx, cubic_weight(frac - (k as f64 - 1.0)))
        })
    };
    RgbImage::from_fn(h * s, w * s, |(y, x, c)| {
        let ty = taps(y as f64 / s as f64, h);
        let tx = taps(x as f64 / s as f64, w);
        let mut acc = 0.0;
        for &(iy, wy) in &ty {
            for &(ix, wx) in &tx {
                acc += wy * wx * f64::from(d[[iy, ix, c]]);
            }
        }
        acc.clamp(0.0, 1.0) as f32
    })
}

/// Reference frame only: naive demosaic → forward ISP → bicubic ×scale.
pub fn bicubic_baseline(burst: &BurstSample, isp: &IspConfig) -> Result<RgbImage> {
    let frame = burst
        .frames
        .first()
        .ok_or_else(|| Error::Param("burst has no frames".into()))?;
    let scale = burst.hr.height() / frame.height();
    if scale == 0 || frame.height() * scale != burst.hr.height() || frame.width() * scale != burst.hr.width() {
        return Err(Error::Shape(
            "ground truth is not an integer multiple of the frame size".into(),
        ));
    }
    let srgb = forward_isp(&demosaic_naive(frame), isp)?;
    Ok(bicubic_upsample(&srgb, scale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub n_frames: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub n_frames: usize,
    pub samples: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricReport {
    pub label: String,
    pub config_hash: String,
    pub samples: Vec<SampleMetrics>,
    /// One entry per evaluated frame count, ascending.
    pub aggregate: Vec<AggregateMetrics>,
}

impl MetricReport {
    pub fn new(label: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            config_hash: config_hash.into(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, m: SampleMetrics) {
        self.samples.push(m);
    }

    /// Recomputes `aggregate` from `samples`.
    pub fn finalize(&mut self) {
        let mut counts: Vec<usize> = self.samples.iter().map(|s| s.n_frames).collect();
        counts.sort_unstable();
        counts.dedup();
        self.aggregate = counts
            .into_iter()
            .map(|n| {
                let sel: Vec<&SampleMetrics> = self.samples.iter().filter(|s| s.n_frames == n).collect();
                let k = sel.len() as f64;
                AggregateMetrics {
                    n_frames: n,
                    samples: sel.len(),
                    mean_psnr: sel.iter().map(|s| s.psnr).sum::<f64>() / k,
                    mean_ssim: sel.iter().map(|s| s.ssim).sum::<f64>() / k,
                }
            })
            .collect();
    }

    pub fn aggregate_for(&self, n_frames: usize) -> Option<&AggregateMetrics> {
        self.aggregate.iter().find(|a| a.n_frames == n_frames)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,n_frames,psnr,ssim\n");
        for m in &self.samples {
            s.push_str(&format!("{},{},{:.6},{:.6}\n", m.id, m.n_frames, m.psnr, m.ssim));
        }
        s
    }
}
