//! Bilinear sampling and 3×3 deformable convolution (single group, no modulation).
//!
//! Offsets are stored tap-major: channel `2m` holds Δy and channel `2m + 1` holds
//! Δx for tap `m = 3·ki + kj`, whose regular grid displacement is `(ki - 1, kj - 1)`.
//! Samples outside the feature map read zeros.
//!
//! The slice kernels ([`deform_im2col`], [`deform_col2im`]) are generic over the
//! float type and shared with the autograd op in the model crate.

use ndarray::{Array1, Array3, Array4};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const TAPS: usize = 9;

/// C×H×W feature map.
pub type FeatureMap = Array3<f64>;

/// (2·9)×H×W offsets in feature pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField(pub Array3<f64>);

impl OffsetField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self(Array3::zeros((2 * TAPS, h, w)))
    }

    /// Same displacement for every tap and pixel.
    pub fn constant(dy: f64, dx: f64, h: usize, w: usize) -> Self {
        Self(Array3::from_shape_fn((2 * TAPS, h, w), |(c, _, _)| {
            if c % 2 == 0 {
                dy
            } else {
                dx
            }
        }))
    }

    pub fn dims(&self) -> (usize, usize) {
        let (_, h, w) = self.0.dim();
        (h, w)
    }
}

#[inline]
fn tap_delta(m: usize) -> (isize, isize) {
    ((m / 3) as isize - 1, (m % 3) as isize - 1)
}

/// Corner indices (or `None` when out of range) and fractional parts for a bilinear read.
struct Footprint<T> {
    idx: [Option<usize>; 4],
    ly: T,
    lx: T,
}

impl<T: Float> Footprint<T> {
    fn new(y: T, x: T, h: usize, w: usize) -> Option<Self> {
        let one = T::one();
        if !(y > -one && x > -one && y < T::from(h).unwrap() && x < T::from(w).unwrap()) {
            return None;
        }
        let y0f = y.floor();
        let x0f = x.floor();
        let (y0, x0) = (y0f.to_isize().unwrap(), x0f.to_isize().unwrap());
        let at = |yy: isize, xx: isize| {
            (yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w).then(|| yy as usize * w + xx as usize)
        };
        Some(Self {
            idx: [at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1)],
            ly: y - y0f,
            lx: x - x0f,
        })
    }

    /// Weights for corners (y0,x0), (y0,x1), (y1,x0), (y1,x1).
    fn weights(&self) -> [T; 4] {
        let one = T::one();
        let (hy, hx) = (one - self.ly, one - self.lx);
        [hy * hx, hy * self.lx, self.ly * hx, self.ly * self.lx]
    }

    /// ∂weights/∂y and ∂weights/∂x.
    fn weight_grads(&self) -> ([T; 4], [T; 4]) {
        let one = T::one();
        let (hy, hx) = (one - self.ly, one - self.lx);
        ([-hx, -self.lx, hx, self.lx], [-hy, hy, -self.ly, self.ly])
    }

    fn read(&self, plane: &[T]) -> T {
        let w = self.weights();
        (0..4).fold(T::zero(), |acc, k| match self.idx[k] {
            Some(i) => acc + w[k] * plane[i],
            None => acc,
        })
    }
}

/// Bilinear read of every channel at (y, x); out-of-range neighbours read zero.
pub fn bilinear_sample(feature: &FeatureMap, y: f64, x: f64) -> Vec<f64> {
    let (c, h, w) = feature.dim();
    let feat = feature.as_standard_layout();
    let data = feat.as_slice().expect("standard layout");
    match Footprint::new(y, x, h, w) {
        Some(fp) => (0..c).map(|ch| fp.read(&data[ch * h * w..(ch + 1) * h * w])).collect(),
        None => vec![0.0; c],
    }
}

/// Deformable im2col: `cols[(c·9 + m)·HW + p]` is channel `c` read at tap `m` of pixel `p`.
///
/// `input` is C×H×W and `offsets` is 18×H×W, both contiguous.
pub fn deform_im2col<T: Float>(input: &[T], offsets: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(input.len(), c * hw);
    debug_assert_eq!(offsets.len(), 2 * TAPS * hw);
    debug_assert_eq!(cols.len(), c * TAPS * hw);
    for m in 0..TAPS {
        let (dy, dx) = tap_delta(m);
        for py in 0..h {
            for px in 0..w {
                let p = py * w + px;
                let y = T::from(py as isize + dy).unwrap() + offsets[2 * m * hw + p];
                let x = T::from(px as isize + dx).unwrap() + offsets[(2 * m + 1) * hw + p];
                match Footprint::new(y, x, h, w) {
                    Some(fp) => {
                        for ch in 0..c {
                            cols[(ch * TAPS + m) * hw + p] = fp.read(&input[ch * hw..(ch + 1) * hw]);
                        }
                    }
                    None => {
                        for ch in 0..c {
                            cols[(ch * TAPS + m) * hw + p] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`deform_im2col`]: accumulates ∂L/∂input and ∂L/∂offsets from ∂L/∂cols.
pub fn deform_col2im<T: Float>(
    input: &[T],
    offsets: &[T],
    grad_cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    grad_input: &mut [T],
    grad_offsets: &mut [T],
) {
    let hw = h * w;
    for m in 0..TAPS {
        let (dy, dx) = tap_delta(m);
        for py in 0..h {
            for px in 0..w {
                let p = py * w + px;
                let y = T::from(py as isize + dy).unwrap() + offsets[2 * m * hw + p];
                let x = T::from(px as isize + dx).unwrap() + offsets[(2 * m + 1) * hw + p];
                let Some(fp) = Footprint::new(y, x, h, w) else {
                    continue;
                };
                let wts = fp.weights();
                let (gy, gx) = fp.weight_grads();
                let (mut acc_y, mut acc_x) = (T::zero(), T::zero());
                for ch in 0..c {
                    let g = grad_cols[(ch * TAPS + m) * hw + p];
                    let plane = &input[ch * hw..(ch + 1) * hw];
                    let gin = &mut grad_input[ch * hw..(ch + 1) * hw];
                    for k in 0..4 {
                        if let Some(i) = fp.idx[k] {
                            gin[i] = gin[i] + wts[k] * g;
                            acc_y = acc_y + gy[k] * plane[i] * g;
                            acc_x = acc_x + gx[k] * plane[i] * g;
                        }
                    }
                }
                grad_offsets[2 * m * hw + p] = grad_offsets[2 * m * hw + p] + acc_y;
                grad_offsets[(2 * m + 1) * hw + p] = grad_offsets[(2 * m + 1) * hw + p] + acc_x;
            }
        }
    }
}

fn check_shapes(feature: &FeatureMap, offsets: &OffsetField, weights: &Array4<f64>, bias: &Array1<f64>) -> Result<()> {
    let (c, h, w) = feature.dim();
    let (oc, ic, kh, kw) = weights.dim();
    if offsets.0.dim() != (2 * TAPS, h, w) {
        return Err(Error::Shape(format!(
            "offsets {:?} do not match feature {h}x{w}",
            offsets.0.dim()
        )));
    }
    if ic != c || kh != 3 || kw != 3 {
        return Err(Error::Shape(format!(
            "weights {:?} incompatible with {c} input channels",
            weights.dim()
        )));
    }
    if bias.len() != oc {
        return Err(Error::Shape(format!(
            "bias has {} entries for {oc} outputs",
            bias.len()
        )));
    }
    Ok(())
}

fn contiguous(a: &Array3<f64>) -> Vec<f64> {
    a.as_standard_layout().iter().copied().collect()
}

/// y(p) = bias + Σ_c Σ_m w[·,c,m]·sample(feature_c, p + p_m + Δp_m(p)).
pub fn deform_conv(
    feature: &FeatureMap,
    offsets: &OffsetField,
    weights: &Array4<f64>,
    bias: &Array1<f64>,
) -> Result<FeatureMap> {
    check_shapes(feature, offsets, weights, bias)?;
    let (c, h, w) = feature.dim();
    let hw = h * w;
    let oc = weights.dim().0;
    let mut cols = vec![0.0; c * TAPS * hw];
    deform_im2col(&contiguous(feature), &contiguous(&offsets.0), c, h, w, &mut cols);
    let wts = weights.as_standard_layout();
    let wts = wts.as_slice().unwrap();
    let mut out = Array3::zeros((oc, h, w));
    for o in 0..oc {
        for p in 0..hw {
            let mut acc = bias[o];
            for k in 0..c * TAPS {
                acc += wts[o * c * TAPS + k] * cols[k * hw + p];
            }
            out[[o, p / w, p % w]] = acc;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DeformGrads {
    pub feature: FeatureMap,
    pub offsets: Array3<f64>,
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
}

/// Analytic gradients of Σ grad_out ⊙ deform_conv(...).
pub fn deform_conv_backward(
    feature: &FeatureMap,
    offsets: &OffsetField,
    weights: &Array4<f64>,
    bias: &Array1<f64>,
    grad_out: &Array3<f64>,
) -> Result<DeformGrads> {
    check_shapes(feature, offsets, weights, bias)?;
    let (c, h, w) = feature.dim();
    let hw = h * w;
    let oc = weights.dim().0;
    if grad_out.dim() != (oc, h, w) {
        return Err(Error::Shape("output gradient shape mismatch".into()));
    }
    let input = contiguous(feature);
    let offs = contiguous(&offsets.0);
    let gout = contiguous(grad_out);
    let wts = weights.as_standard_layout();
    let wts = wts.as_slice().unwrap();

    let mut cols = vec![0.0; c * TAPS * hw];
    deform_im2col(&input, &offs, c, h, w, &mut cols);

    let mut grad_w = vec![0.0; oc * c * TAPS];
    let mut grad_cols = vec![0.0; c * TAPS * hw];
    for o in 0..oc {
        for k in 0..c * TAPS {
            let mut acc = 0.0;
            for p in 0..hw {
                acc += gout[o * hw + p] * cols[k * hw + p];
                grad_cols[k * hw + p] += wts[o * c * TAPS + k] * gout[o * hw + p];
            }
            grad_w[o * c * TAPS + k] = acc;
        }
    }
    let mut grad_in = vec![0.0; c * hw];
    let mut grad_off = vec![0.0; 2 * TAPS * hw];
    deform_col2im(&input, &offs, &grad_cols, c, h, w, &mut grad_in, &mut grad_off);

    Ok(DeformGrads {
        feature: Array3::from_shape_vec((c, h, w), grad_in).unwrap(),
        offsets: Array3::from_shape_vec((2 * TAPS, h, w), grad_off).unwrap(),
        weights: Array4::from_shape_vec((oc, c, 3, 3), grad_w).unwrap(),
        bias: Array1::from_iter((0..oc).map(|o| gout[o * hw..(o + 1) * hw].iter().sum())),
    })
}

/// A double-precision problem for finite-difference checks.
#[derive(Debug, Clone)]
pub struct DeformInstance {
    pub feature: FeatureMap,
    pub offsets: OffsetField,
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
    /// Cotangent defining the scalar loss Σ probe ⊙ output.
    pub probe: Array3<f64>,
}

/// Minimum distance of sampling coordinates from the integer lattice in random instances.
pub const KINK_MARGIN: f64 = 1e-3;

impl DeformInstance {
    /// Random instance whose sampling coordinates stay at least 0.05 away from integers.
    pub fn random(c_in: usize, c_out: usize, h: usize, w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feature = Array3::from_shape_fn((c_in, h, w), |_| rng.random_range(-1.0..1.0));
        let offsets = OffsetField(Array3::from_shape_fn((2 * TAPS, h, w), |_| {
            let whole = rng.random_range(-1i32..=1) as f64;
            whole + rng.random_range(0.05..0.95)
        }));
        let weights = Array4::from_shape_fn((c_out, c_in, 3, 3), |_| rng.random_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(c_out, |_| rng.random_range(-0.5..0.5));
        let probe = Array3::from_shape_fn((c_out, h, w), |_| rng.random_range(-1.0..1.0));
        Self {
            feature,
            offsets,
            weights,
            bias,
            probe,
        }
    }

    pub fn loss(&self) -> f64 {
        let out = deform_conv(&self.feature, &self.offsets, &self.weights, &self.bias).expect("consistent instance");
        (&out * &self.probe).sum()
    }

    pub fn analytic_grads(&self) -> DeformGrads {
        deform_conv_backward(&self.feature, &self.offsets, &self.weights, &self.bias, &self.probe)
            .expect("consistent instance")
    }

    /// Whether every sampling coordinate is at least `margin` away from an integer.
    pub fn avoids_kinks(&self, margin: f64) -> bool {
        self.offsets.0.iter().all(|&d| {
            let f = d - d.floor();
            f >= margin && f <= 1.0 - margin
        })
    }
}

/// Relative error |a - n| / max(|a|, |n|, 1e-3); the floor keeps near-zero gradients from dominating.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub const FD_STEP: f64 = 1e-5;

/// Largest relative error between analytic gradients and central differences over
/// every entry of the feature, offsets and weights.
pub fn deform_conv_grad_check(instance: &DeformInstance) -> f64 {
    let grads = instance.analytic_grads();
    let mut worst = 0.0f64;
    let mut probe_all =
        |get: &dyn Fn(&DeformInstance) -> Vec<f64>, set: &dyn Fn(&mut DeformInstance, usize, f64), analytic: &[f64]| {
            let base = get(instance);
            for (i, &a) in analytic.iter().enumerate() {
                let mut plus = instance.clone();
                set(&mut plus, i, base[i] + FD_STEP);
                let mut minus = instance.clone();
                set(&mut minus, i, base[i] - FD_STEP);
                let numeric = (plus.loss() - minus.loss()) / (2.0 * FD_STEP);
                worst = worst.max(relative_error(a, numeric));
            }
        };
    probe_all(
        &|s| s.feature.iter().copied().collect(),
        &|s, i, v| *s.feature.iter_mut().nth(i).unwrap() = v,
        &grads.feature.iter().copied().collect::<Vec<_>>(),
    );
    probe_all(
        &|s| s.offsets.0.iter().copied().collect(),
        &|s, i, v| *s.offsets.0.iter_mut().nth(i).unwrap() = v,
        &grads.offsets.iter().copied().collect::<Vec<_>>(),
    );
    probe_all(
        &|s| s.weights.iter().copied().collect(),
        &|s, i, v| *s.weights.iter_mut().nth(i).unwrap() = v,
        &grads.weights.iter().copied().collect::<Vec<_>>(),
    );
    worst
}
