//! Simplified camera pipeline: sRGB ↔ linear sensor RGB, RGGB mosaic, sensor noise.

use ndarray::{Array2, Array3, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{RawImage, RgbImage};

const GAMMA: f64 = 2.2;

/// Stage switches and parameters of the simplified ISP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IspConfig {
    pub tone_curve: bool,
    pub gamma: bool,
    pub white_balance: bool,
    /// Per-channel gains (r, g, b) applied by the forward pipeline.
    pub wb_gains: [f32; 3],
    /// Camera-to-output colour matrix applied by the forward pipeline.
    pub ccm: [[f32; 3]; 3],
}

impl Default for IspConfig {
    fn default() -> Self {
        Self {
            tone_curve: true,
            gamma: true,
            white_balance: true,
            wb_gains: [2.0, 1.0, 1.7],
            ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

impl IspConfig {
    /// Every stage off; both directions reduce to a clamp.
    pub fn disabled() -> Self {
        Self {
            tone_curve: false,
            gamma: false,
            white_balance: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.wb_gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::Config(format!(
                "white-balance gains must be positive, got {:?}",
                self.wb_gains
            )));
        }
        self.ccm_inverse().map(|_| ())
    }

    fn ccm_f64(&self) -> [[f64; 3]; 3] {
        self.ccm.map(|row| row.map(f64::from))
    }

    fn ccm_inverse(&self) -> Result<[[f64; 3]; 3]> {
        let m = self.ccm_f64();
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
        if !det.is_finite() || det.abs() < 1e-8 {
            return Err(Error::Config(format!("colour matrix is not invertible (det = {det})")));
        }
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        Ok(adj.map(|row| row.map(|v| v / det)))
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    3.0 * x * x - 2.0 * x * x * x
}

fn inverse_smoothstep(y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    0.5 - ((1.0 - 2.0 * y).asin() / 3.0).sin()
}

fn apply_matrix(img: &mut Array3<f64>, m: &[[f64; 3]; 3]) {
    let (h, w, _) = img.dim();
    for y in 0..h {
        for x in 0..w {
            let p = [img[[y, x, 0]], img[[y, x, 1]], img[[y, x, 2]]];
            for (c, row) in m.iter().enumerate() {
                img[[y, x, c]] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
            }
        }
    }
}

fn finish(img: Array3<f64>) -> RgbImage {
    RgbImage::new(img.mapv(|v| v.clamp(0.0, 1.0) as f32)).expect("three channels")
}

/// sRGB → linear sensor RGB: inverse tone curve, inverse gamma, inverse CCM, inverse white balance.
pub fn inverse_isp(srgb: &RgbImage, cfg: &IspConfig) -> Result<RgbImage> {
    cfg.validate()?;
    let ccm_inv = cfg.ccm_inverse()?;
    let mut img = srgb.data().mapv(|v| f64::from(v).clamp(0.0, 1.0));
    if cfg.tone_curve {
        img.mapv_inplace(inverse_smoothstep);
    }
    if cfg.gamma {
        img.mapv_inplace(|v| v.max(0.0).powf(GAMMA));
    }
    apply_matrix(&mut img, &ccm_inv);
    if cfg.white_balance {
        for c in 0..3 {
            let g = f64::from(cfg.wb_gains[c]);
            img.index_axis_mut(ndarray::Axis(2), c).mapv_inplace(|v| v / g);
        }
    }
    Ok(finish(img))
}

/// Linear sensor RGB → sRGB, undoing [`inverse_isp`] stage by stage.
pub fn forward_isp(linear: &RgbImage, cfg: &IspConfig) -> Result<RgbImage> {
    cfg.validate()?;
    let mut img = linear.data().mapv(|v| f64::from(v).clamp(0.0, 1.0));
    if cfg.white_balance {
        for c in 0..3 {
            let g = f64::from(cfg.wb_gains[c]);
            img.index_axis_mut(ndarray::Axis(2), c).mapv_inplace(|v| v * g);
        }
    }
    apply_matrix(&mut img, &cfg.ccm_f64());
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    if cfg.gamma {
        img.mapv_inplace(|v| v.powf(1.0 / GAMMA));
    }
    if cfg.tone_curve {
        img.mapv_inplace(smoothstep);
    }
    Ok(finish(img))
}

/// Colour index sampled at (y, x) under RGGB: 0 = R, 1 = G, 2 = B.
pub fn rggb_channel(y: usize, x: usize) -> usize {
    match (y % 2, x % 2) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    }
}

pub fn mosaic(linear: &RgbImage) -> Result<RawImage> {
    let (h, w) = linear.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("mosaic needs even dims, got {h}x{w}")));
    }
    let data = linear.data();
    RawImage::new(Array2::from_shape_fn((h, w), |(y, x)| data[[y, x, rggb_channel(y, x)]]))
}

/// Bilinear demosaic: every missing sample is the mean of the same-colour sites in its 3×3 neighbourhood.
pub fn demosaic_naive(raw: &RawImage) -> RgbImage {
    let (h, w) = (raw.height(), raw.width());
    let d = raw.data();
    RgbImage::from_fn(h, w, |(y, x, c)| {
        if rggb_channel(y, x) == c {
            return d[[y, x]];
        }
        let (mut sum, mut n) = (0.0f64, 0u32);
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                if rggb_channel(yy, xx) == c {
                    sum += f64::from(d[[yy, xx]]);
                    n += 1;
                }
            }
        }
        (sum / f64::from(n)) as f32
    })
}

/// Packs an h×w RGGB mosaic into 4×(h/2)×(w/2) planes ordered R, G(row 0), G(row 1), B.
pub fn pack_bayer(raw: &RawImage) -> Array3<f32> {
    let d = raw.data();
    let (h2, w2) = (raw.height() / 2, raw.width() / 2);
    Array3::from_shape_fn((4, h2, w2), |(c, y, x)| d[[2 * y + c / 2, 2 * x + c % 2]])
}

/// Sensor noise parameters for the heteroscedastic Gaussian model
/// x' = x + ε, ε ~ N(0, read_sigma² + shot_gain·x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub read_sigma: f32,
    pub shot_gain: f32,
    /// Draw the shot component from a true Poisson distribution instead of its Gaussian approximation.
    #[serde(default)]
    pub exact_poisson: bool,
}

/// Log noise level used for the default parameters.
pub const DEFAULT_LOG_NOISE: f64 = -2.6;

impl Default for NoiseParams {
    fn default() -> Self {
        let level = DEFAULT_LOG_NOISE.exp();
        Self {
            read_sigma: (level * 0.1) as f32,
            shot_gain: (level * 0.01) as f32,
            exact_poisson: false,
        }
    }
}

impl NoiseParams {
    pub fn none() -> Self {
        Self {
            read_sigma: 0.0,
            shot_gain: 0.0,
            exact_poisson: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.read_sigma >= 0.0
            && self.shot_gain >= 0.0
            && self.read_sigma.is_finite()
            && self.shot_gain.is_finite())
        {
            return Err(Error::Config(format!(
                "noise parameters must be non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn add_noise(raw: &RawImage, params: &NoiseParams, rng: &mut impl Rng) -> Result<RawImage> {
    params.validate()?;
    if params.read_sigma == 0.0 && params.shot_gain == 0.0 {
        return Ok(raw.clone());
    }
    let read = f64::from(params.read_sigma);
    let shot = f64::from(params.shot_gain);
    let mut out = raw.data().clone();
    if params.exact_poisson && shot > 0.0 {
        let read_noise = Normal::new(0.0, read).expect("validated sigma");
        Zip::from(&mut out).for_each(|v| {
            let lambda = f64::from(*v).max(0.0) / shot;
            let photons: f64 = if lambda > 0.0 {
                Poisson::new(lambda).expect("positive rate").sample(rng)
            } else {
                0.0
            };
            *v = (photons * shot + read_noise.sample(rng)).clamp(0.0, 1.0) as f32;
        });
    } else {
        Zip::from(&mut out).for_each(|v| {
            let x = f64::from(*v);
            let std = (read * read + shot * x.max(0.0)).sqrt();
            let z: f64 = StandardNormal.sample(rng);
            *v = (x + std * z).clamp(0.0, 1.0) as f32;
        });
    }
    RawImage::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn interior_image(h: usize, w: usize) -> RgbImage {
        RgbImage::from_fn(h, w, |(y, x, c)| {
            0.1 + 0.8 * (((y * 7 + x * 3 + c * 5) % 23) as f32 / 22.0)
        })
    }

    #[test]
    fn disabled_pipeline_is_bit_identity() {
        let img = interior_image(6, 8);
        let cfg = IspConfig::disabled();
        assert_eq!(inverse_isp(&img, &cfg).unwrap(), img);
        assert_eq!(forward_isp(&img, &cfg).unwrap(), img);
    }

    #[test]
    fn default_gains_divide_red_by_two() {
        let gray = RgbImage::constant(2, 2, 0.5);
        let wb_only = IspConfig {
            tone_curve: false,
            gamma: false,
            ..IspConfig::default()
        };
        let out = inverse_isp(&gray, &wb_only).unwrap();
        assert_eq!(out.data()[[0, 0, 0]], 0.25);
        assert_eq!(out.data()[[0, 0, 1]], 0.5);
        assert!((out.data()[[0, 0, 2]] - 0.5 / 1.7).abs() < 1e-7);

        // Full default pipeline: red equals the linearised value halved.
        let full = inverse_isp(&gray, &IspConfig::default()).unwrap();
        let lin = inverse_smoothstep(0.5).powf(GAMMA);
        assert!((f64::from(full.data()[[1, 1, 0]]) - lin / 2.0).abs() < 1e-7);
        assert!((f64::from(full.data()[[1, 1, 1]]) - lin).abs() < 1e-7);
    }

    #[test]
    fn forward_inverts_inverse_on_interior_values() {
        let img = interior_image(16, 16);
        let cfg = IspConfig::default();
        let back = forward_isp(&inverse_isp(&img, &cfg).unwrap(), &cfg).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_inverts_inverse_with_nontrivial_ccm() {
        let cfg = IspConfig {
            ccm: [[1.2, -0.1, -0.1], [-0.05, 1.1, -0.05], [0.0, -0.2, 1.2]],
            ..IspConfig::default()
        };
        let img = RgbImage::from_fn(8, 8, |(y, x, c)| 0.3 + 0.02 * (y + x + c) as f32);
        let back = forward_isp(&inverse_isp(&img, &cfg).unwrap(), &cfg).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn black_stays_black() {
        let black = RgbImage::zeros(4, 4);
        assert_eq!(forward_isp(&black, &IspConfig::default()).unwrap(), black);
    }

    #[test]
    fn singular_ccm_is_a_config_error() {
        let cfg = IspConfig {
            ccm: [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            ..IspConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(inverse_isp(&RgbImage::zeros(2, 2), &cfg).is_err());
    }

    #[test]
    fn mosaic_pattern_and_odd_dims() {
        let red = RgbImage::from_fn(4, 4, |(_, _, c)| if c == 0 { 1.0 } else { 0.0 });
        let raw = mosaic(&red).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = if y % 2 == 0 && x % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(raw.data()[[y, x]], want);
            }
        }
        assert!(mosaic(&RgbImage::zeros(3, 4)).is_err());
        let gray = mosaic(&RgbImage::constant(4, 6, 0.3)).unwrap();
        assert!(gray.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn mosaic_samples_exactly_one_channel_per_site() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = RgbImage::from_fn(8, 8, |_| rng.random::<f32>());
        let raw = mosaic(&img).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let v = raw.data()[[y, x]];
                let expected = match (y % 2, x % 2) {
                    (0, 0) => img.data()[[y, x, 0]],
                    (1, 1) => img.data()[[y, x, 2]],
                    _ => img.data()[[y, x, 1]],
                };
                assert_eq!(v, expected);
                let matches = (0..3).filter(|&c| img.data()[[y, x, c]] == v).count();
                assert!(matches >= 1);
            }
        }
    }

    #[test]
    fn demosaic_is_exact_on_constants_and_ramps() {
        let c = RgbImage::constant(6, 8, 0.42);
        let out = demosaic_naive(&mosaic(&c).unwrap());
        assert_eq!(out.dims(), (6, 8));
        for v in out.data() {
            assert!((v - 0.42).abs() < 1e-7);
        }

        let ramp = RgbImage::from_fn(8, 12, |(_, x, c)| 0.05 * x as f32 + 0.01 * c as f32);
        let out = demosaic_naive(&mosaic(&ramp).unwrap());
        for y in 1..7 {
            for x in 1..11 {
                for ch in 0..3 {
                    assert!((out.data()[[y, x, ch]] - ramp.data()[[y, x, ch]]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn pack_bayer_layout() {
        let raw = RawImage::new(Array2::from_shape_fn((4, 6), |(y, x)| (y * 6 + x) as f32)).unwrap();
        let p = pack_bayer(&raw);
        assert_eq!(p.dim(), (4, 2, 3));
        assert_eq!(p[[0, 1, 2]], raw.data()[[2, 4]]);
        assert_eq!(p[[1, 1, 2]], raw.data()[[2, 5]]);
        assert_eq!(p[[2, 1, 2]], raw.data()[[3, 4]]);
        assert_eq!(p[[3, 1, 2]], raw.data()[[3, 5]]);
    }

    #[test]
    fn zero_noise_is_identity_and_seeded_noise_is_reproducible() {
        let raw = mosaic(&interior_image(8, 8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_noise(&raw, &NoiseParams::none(), &mut rng).unwrap(), raw);
        let p = NoiseParams::default();
        let a = add_noise(&raw, &p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = add_noise(&raw, &p, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, raw);
    }

    #[test]
    fn default_noise_follows_log_level() {
        let p = NoiseParams::default();
        assert!((p.read_sigma - 0.007_427_358).abs() < 1e-6);
        assert!((p.shot_gain - 0.000_742_735_8).abs() < 1e-7);
    }

    #[test]
    fn exact_poisson_mean_matches_signal() {
        let raw = RawImage::new(Array2::from_elem((200, 200), 0.3)).unwrap();
        let p = NoiseParams {
            read_sigma: 0.0,
            shot_gain: 0.001,
            exact_poisson: true,
        };
        let out = add_noise(&raw, &p, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let n = out.data().len() as f64;
        let mean = out.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = out.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - 0.3).abs() < 1e-3, "{mean}");
        assert!((var / (0.001 * 0.3) - 1.0).abs() < 0.05, "{var}");
    }
}
