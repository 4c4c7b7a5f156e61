//! Differentiable operators missing from the tensor backend.

use candle_core::{CpuStorage, DType, Device, Layout, Shape, Tensor};
use kbnet_core::deform::{deform_col2im, deform_im2col, TAPS};
use num_traits::Float;

use crate::error::{ModelError, Result};

fn slice_of<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("deformable sampling expects contiguous inputs"),
    }
}

/// Batched deformable im2col: feature B×C×H×W and offsets B×18×H×W give
/// columns B×(C·9)×(H·W).
struct DeformIm2col;

fn im2col_batched<T: Float>(x: &[T], off: &[T], b: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); b * c * TAPS * hw];
    for n in 0..b {
        deform_im2col(
            &x[n * c * hw..(n + 1) * c * hw],
            &off[n * 2 * TAPS * hw..(n + 1) * 2 * TAPS * hw],
            c,
            h,
            w,
            &mut cols[n * c * TAPS * hw..(n + 1) * c * TAPS * hw],
        );
    }
    cols
}

impl candle_core::CustomOp2 for DeformIm2col {
    fn name(&self) -> &'static str {
        "deform-im2col"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, c, h, w) = l1.shape().dims4()?;
        let out_shape = Shape::from((b, c * TAPS, h * w));
        match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(o)) => {
                let cols = im2col_batched(slice_of(x, l1)?, slice_of(o, l2)?, b, c, h, w);
                Ok((CpuStorage::F32(cols), out_shape))
            }
            (CpuStorage::F64(x), CpuStorage::F64(o)) => {
                let cols = im2col_batched(slice_of(x, l1)?, slice_of(o, l2)?, b, c, h, w);
                Ok((CpuStorage::F64(cols), out_shape))
            }
            _ => candle_core::bail!("deformable sampling supports matching f32 or f64 inputs"),
        }
    }

    fn bwd(
        &self,
        x: &Tensor,
        off: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (b, c, h, w) = x.dims4()?;
        let hw = h * w;
        let dev = x.device();
        macro_rules! run {
            ($t:ty) => {{
                let xv = x.flatten_all()?.to_vec1::<$t>()?;
                let ov = off.flatten_all()?.to_vec1::<$t>()?;
                let gv = grad.contiguous()?.flatten_all()?.to_vec1::<$t>()?;
                let mut gx = vec![0 as $t; b * c * hw];
                let mut go = vec![0 as $t; b * 2 * TAPS * hw];
                for n in 0..b {
                    deform_col2im(
                        &xv[n * c * hw..(n + 1) * c * hw],
                        &ov[n * 2 * TAPS * hw..(n + 1) * 2 * TAPS * hw],
                        &gv[n * c * TAPS * hw..(n + 1) * c * TAPS * hw],
                        c,
                        h,
                        w,
                        &mut gx[n * c * hw..(n + 1) * c * hw],
                        &mut go[n * 2 * TAPS * hw..(n + 1) * 2 * TAPS * hw],
                    );
                }
                (
                    Tensor::from_vec(gx, (b, c, h, w), dev)?,
                    Tensor::from_vec(go, (b, 2 * TAPS, h, w), dev)?,
                )
            }};
        }
        let (gx, go) = match x.dtype() {
            DType::F32 => run!(f32),
            DType::F64 => run!(f64),
            dt => candle_core::bail!("deformable sampling does not support {dt:?}"),
        };
        Ok((Some(gx), Some(go)))
    }
}

/// Deformable 3×3 convolution. `weight` is O×C×3×3, `bias` has O entries and
/// `offsets` is B×18×H×W with (Δy, Δx) pairs per tap in row-major tap order.
pub fn deform_conv2d(x: &Tensor, offsets: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if offsets.dims4()? != (b, 2 * TAPS, h, w) {
        return Err(ModelError::Shape(format!(
            "offsets {:?} do not match feature {:?}",
            offsets.dims(),
            x.dims()
        )));
    }
    let (o, wc, kh, kw) = weight.dims4()?;
    if (wc, kh, kw) != (c, 3, 3) {
        return Err(ModelError::Shape(format!(
            "deformable weight {:?} for {c} input channels",
            weight.dims()
        )));
    }
    let cols = x.contiguous()?.apply_op2(&offsets.contiguous()?, DeformIm2col)?;
    let out = weight.reshape((1, o, c * TAPS))?.broadcast_matmul(&cols)?;
    Ok(out.reshape((b, o, h, w))?.broadcast_add(&bias.reshape((1, o, 1, 1))?)?)
}

/// Interpolation matrix for half-pixel-centred bilinear resizing along one axis.
fn resize_matrix(n_in: usize, n_out: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; n_out * n_in];
    let ratio = n_in as f64 / n_out as f64;
    for i in 0..n_out {
        let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        let f = src - lo as f64;
        m[i * n_in + lo] += 1.0 - f;
        m[i * n_in + hi] += f;
    }
    Ok(Tensor::from_vec(m, (n_out, n_in), dev)?.to_dtype(dtype)?)
}

/// Bilinear resize of a B×C×H×W tensor, built from two matrix products so it is
/// differentiable with the stock backward rules.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let rows = resize_matrix(h, out_h, x.dtype(), x.device())?;
    let cols = resize_matrix(w, out_w, x.dtype(), x.device())?.t()?;
    let x = x.broadcast_matmul(&cols)?;
    Ok(rows.broadcast_matmul(&x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kbnet_core::deform::{deform_conv, OffsetField};
    use ndarray::{Array1, Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deform_conv_matches_reference_per_batch_item() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (b, c, o, h, w) = (2, 3, 2, 5, 4);
        let xv: Vec<f64> = (0..b * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ov: Vec<f64> = (0..b * 18 * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
        let wv: Vec<f64> = (0..o * c * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bv = vec![0.25, -0.5];
        let dev = Device::Cpu;
        let out = deform_conv2d(
            &Tensor::from_vec(xv.clone(), (b, c, h, w), &dev).unwrap(),
            &Tensor::from_vec(ov.clone(), (b, 18, h, w), &dev).unwrap(),
            &Tensor::from_vec(wv.clone(), (o, c, 3, 3), &dev).unwrap(),
            &Tensor::from_vec(bv.clone(), o, &dev).unwrap(),
        )
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1::<f64>()
        .unwrap();
        for n in 0..b {
            let f = Array3::from_shape_vec((c, h, w), xv[n * c * h * w..(n + 1) * c * h * w].to_vec()).unwrap();
            let of = OffsetField(
                Array3::from_shape_vec((18, h, w), ov[n * 18 * h * w..(n + 1) * 18 * h * w].to_vec()).unwrap(),
            );
            let want = deform_conv(
                &f,
                &of,
                &Array4::from_shape_vec((o, c, 3, 3), wv.clone()).unwrap(),
                &Array1::from_vec(bv.clone()),
            )
            .unwrap();
            for (a, e) in out[n * o * h * w..(n + 1) * o * h * w].iter().zip(want.iter()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_resize_preserves_constants_and_matches_known_weights() {
        let dev = Device::Cpu;
        let x = Tensor::full(0.5f32, (1, 2, 3, 4), &dev).unwrap();
        let y = resize_bilinear(&x, 6, 8).unwrap();
        assert_eq!(y.dims(), &[1, 2, 6, 8]);
        assert!(y
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()
            .iter()
            .all(|v| (v - 0.5).abs() < 1e-7));
        // 1-D ramp 0,1 upsampled to 4: sources -0.25→0, 0.25, 0.75, 1.25→1
        let r = Tensor::new(&[[[[0f64, 1.0]]]], &dev).unwrap();
        let up = resize_bilinear(&r, 1, 4)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        assert_eq!(up, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn rejects_mismatched_offsets() {
        let dev = Device::Cpu;
        let x = Tensor::zeros((1, 2, 4, 4), DType::F32, &dev).unwrap();
        let off = Tensor::zeros((1, 18, 4, 3), DType::F32, &dev).unwrap();
        let wt = Tensor::zeros((2, 2, 3, 3), DType::F32, &dev).unwrap();
        let b = Tensor::zeros(2, DType::F32, &dev).unwrap();
        assert!(matches!(deform_conv2d(&x, &off, &wt, &b), Err(ModelError::Shape(_))));
    }
}
