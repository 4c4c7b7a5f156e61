use candle_core::Tensor;

use crate::error::{ModelError, Result};

fn same_dims(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(ModelError::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean absolute error between restored and ground-truth images.
pub fn sr_loss(sr: &Tensor, gt: &Tensor) -> Result<Tensor> {
    same_dims(sr, gt, "sr loss")?;
    Ok((sr - gt)?.abs()?.mean_all()?)
}

/// Mean absolute error over every kernel tap, frame and batch item.
///
/// For kernels on the simplex the value lies in [0, 2/961].
pub fn kernel_loss(estimated: &Tensor, truth: &Tensor) -> Result<Tensor> {
    same_dims(estimated, truth, "kernel loss")?;
    Ok((estimated - truth)?.abs()?.mean_all()?)
}
