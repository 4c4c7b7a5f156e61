//! Image containers shared by the whole pipeline, plus PNG I/O.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};

/// H×W×3 image with intensities nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage(Array3<f32>);

impl RgbImage {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.shape()[2] != 3 {
            return Err(Error::Shape(format!(
                "rgb image needs 3 channels, got shape {:?}",
                data.shape()
            )));
        }
        Ok(Self(data))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Array3::zeros((height, width, 3)))
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        Self(Array3::from_elem((height, width, 3), value))
    }

    pub fn from_fn(height: usize, width: usize, f: impl FnMut((usize, usize, usize)) -> f32) -> Self {
        Self(Array3::from_shape_fn((height, width, 3), f))
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn view(&self) -> ArrayView3<'_, f32> {
        self.0.view()
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.0
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.0
    }

    pub fn into_inner(self) -> Array3<f32> {
        self.0
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f32> {
        self.0.index_axis(Axis(2), c)
    }

    pub fn clamp01(mut self) -> Self {
        self.0.mapv_inplace(|v| v.clamp(0.0, 1.0));
        self
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Crop `h`×`w` starting at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height() || left + w > self.width() {
            return Err(Error::Shape(format!(
                "crop {h}x{w}@({top},{left}) exceeds image {}x{}",
                self.height(),
                self.width()
            )));
        }
        Ok(Self(
            self.0.slice(ndarray::s![top..top + h, left..left + w, ..]).to_owned(),
        ))
    }
}

/// Colour filter array layout of a [`RawImage`]. Only RGGB is produced by this toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BayerPattern {
    Rggb,
}

/// Single-channel Bayer mosaic, h×w with h and w even.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    data: Array2<f32>,
    pattern: BayerPattern,
}

impl RawImage {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (h, w) = data.dim();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("raw image dims must be even, got {h}x{w}")));
        }
        Ok(Self {
            data,
            pattern: BayerPattern::Rggb,
        })
    }

    pub fn pattern(&self) -> BayerPattern {
        self.pattern
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f32> {
        self.data
    }

    /// Crop keeping the mosaic phase: `top` and `left` must be even.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top % 2 != 0 || left % 2 != 0 {
            return Err(Error::Shape("raw crop origin must be even".into()));
        }
        if top + h > self.height() || left + w > self.width() {
            return Err(Error::Shape("raw crop exceeds image".into()));
        }
        Self::new(self.data.slice(ndarray::s![top..top + h, left..left + w]).to_owned())
    }
}

fn to_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an 8- or 16-bit PNG (any colour type) as RGB in [0, 1].
pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let rgb = img.into_rgb16();
    let (w, h) = rgb.dimensions();
    let data = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        rgb.get_pixel(x as u32, y as u32)[c] as f32 / 65535.0
    });
    Ok(RgbImage(data))
}

pub fn save_png16(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = img.dims();
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let p = |c| to_u16(img.0[[y as usize, x as usize, c]]);
        Rgb([p(0), p(1), p(2)])
    });
    DynamicImage::ImageRgb16(buf).save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

pub fn save_png8(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = img.dims();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let p = |c| to_u8(img.0[[y as usize, x as usize, c]]);
        Rgb([p(0), p(1), p(2)])
    });
    buf.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

/// 8-bit grayscale preview of a 2-D array already scaled to [0, 1].
pub fn save_gray8(data: ArrayView2<'_, f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = data.dim();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(data[[y as usize, x as usize]])]));
    buf.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_fn(5, 7, |(y, x, c)| ((y * 7 + x) * 3 + c) as f32 / 105.0);
        let p = dir.path().join("a.png");
        save_png16(&img, &p).unwrap();
        let back = load_png(&p).unwrap();
        assert_eq!(back.dims(), (5, 7));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }

    #[test]
    fn raw_requires_even_dims() {
        assert!(RawImage::new(Array2::zeros((3, 4))).is_err());
        assert!(RawImage::new(Array2::zeros((4, 4))).is_ok());
    }

    #[test]
    fn crops_check_bounds() {
        let img = RgbImage::zeros(4, 4);
        assert!(img.crop(2, 2, 2, 2).is_ok());
        assert!(img.crop(3, 0, 2, 2).is_err());
        let raw = RawImage::new(Array2::zeros((4, 4))).unwrap();
        assert!(raw.crop(1, 0, 2, 2).is_err());
    }
}
