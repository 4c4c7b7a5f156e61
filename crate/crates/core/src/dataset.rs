//! On-disk burst datasets.
//!
//! ```text
//! <root>/manifest.json          written last; its presence marks a complete dataset
//! <root>/sample_000000/hr.png   16-bit sRGB ground truth
//!                     frames.tns   `frames`  N×h×w raw mosaics
//!                     kernels.tns  `kernels` N×31×31
//!                     transforms.json  motion, kernel parameters, noise, seeds
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_png, save_png16, RawImage, RgbImage};
use crate::kernel::{BlurKernel, KernelParams};
use crate::raw::{IspConfig, NoiseParams};
use crate::synth::{derive_seed, synthesize_burst, AffineTransform, BurstSample, SynthConfig};
use crate::tns::{write_atomic, TensorContainer};
use crate::TOOLKIT_VERSION;

pub const MANIFEST: &str = "manifest.json";

/// Lower bound substituted for a zero-width band edge; narrower Gaussians are
/// numerically indistinguishable from an impulse on the kernel grid.
pub const MIN_BAND_WIDTH: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source: String,
    pub sample_index: u64,
    pub frame_seeds: Vec<u64>,
    pub hr_dims: [usize; 2],
    pub frame_dims: [usize; 2],
    pub kernel_params: Vec<Option<KernelParams>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub synth: SynthConfig,
    pub isp: IspConfig,
    /// Requested kernel-width band, if the set was generated for one.
    pub band: Option<(f64, f64)>,
    pub samples: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct SampleSidecar {
    sample_index: u64,
    seed: u64,
    transforms: Vec<AffineTransform>,
    kernel_params: Vec<Option<KernelParams>>,
    noise: NoiseParams,
}

/// Resolves a requested band into the width range actually sampled.
pub fn effective_band(lo: f64, hi: f64) -> Result<(f64, f64)> {
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Param(format!("invalid kernel-width band [{lo}, {hi}]")));
    }
    Ok((lo.max(MIN_BAND_WIDTH).min(hi), hi))
}

/// Largest centred crop whose sides are multiples of `m`.
pub fn centre_crop_to_multiple(img: &RgbImage, m: usize) -> Result<RgbImage> {
    let (h, w) = img.dims();
    let (ch, cw) = (h / m * m, w / m * m);
    if ch == 0 || cw == 0 {
        return Err(Error::Shape(format!("image {h}x{w} is smaller than {m}")));
    }
    img.crop((h - ch) / 2, (w - cw) / 2, ch, cw)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_atomic(path, text.as_bytes())
}

fn write_sample(dir: &Path, s: &BurstSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_png16(&s.hr, dir.join("hr.png"))?;

    let (h, w) = (s.frames[0].height(), s.frames[0].width());
    let mut frames = TensorContainer::new();
    frames.insert(
        "frames",
        &[s.frames.len(), h, w],
        s.frames.iter().flat_map(|f| f.data().iter().copied()).collect(),
    )?;
    frames.write(dir.join("frames.tns"))?;

    let ks = s.kernels[0].size();
    let mut kernels = TensorContainer::new();
    kernels.insert(
        "kernels",
        &[s.kernels.len(), ks, ks],
        s.kernels
            .iter()
            .flat_map(|k| k.values().iter().map(|&v| v as f32))
            .collect(),
    )?;
    kernels.write(dir.join("kernels.tns"))?;

    write_json(
        &dir.join("transforms.json"),
        &SampleSidecar {
            sample_index: s.sample_index,
            seed: s.seed,
            transforms: s.transforms.clone(),
            kernel_params: s.kernel_params.clone(),
            noise: s.noise,
        },
    )
}

/// Synthesises one burst per source image and writes the dataset, manifest last.
pub fn write_dataset(
    sources: &[(String, RgbImage)],
    cfg: &SynthConfig,
    isp: &IspConfig,
    band: Option<(f64, f64)>,
    out: &Path,
) -> Result<Manifest> {
    cfg.validate()?;
    isp.validate()?;
    if sources.is_empty() {
        return Err(Error::Param("no source images".into()));
    }
    if out.join(MANIFEST).exists() {
        return Err(Error::Config(format!("{} already holds a dataset", out.display())));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut cfg = cfg.clone();
    if let Some((lo, hi)) = band {
        cfg.width_range = effective_band(lo, hi)?;
    }
    let mut entries = Vec::with_capacity(sources.len());
    for (i, (name, hr)) in sources.iter().enumerate() {
        let idx = i as u64;
        let sample = synthesize_burst(hr, &cfg, isp, idx)?;
        let id = format!("sample_{i:06}");
        write_sample(&out.join(&id), &sample)?;
        entries.push(ManifestEntry {
            id,
            source: name.clone(),
            sample_index: idx,
            frame_seeds: (0..cfg.n_frames as u64)
                .map(|f| derive_seed(cfg.seed, idx, f))
                .collect(),
            hr_dims: [hr.height(), hr.width()],
            frame_dims: [sample.frames[0].height(), sample.frames[0].width()],
            kernel_params: sample.kernel_params.clone(),
        });
        log::debug!("wrote sample {i} from {name}");
    }
    let manifest = Manifest {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        synth: cfg,
        isp: isp.clone(),
        band,
        samples: entries,
    };
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// PNG files in `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every PNG in `hr_dir`, centre-cropped to a multiple of 2·scale.
pub fn load_hr_dir(hr_dir: &Path, scale: usize) -> Result<Vec<(String, RgbImage)>> {
    let paths = list_pngs(hr_dir)?;
    if paths.is_empty() {
        return Err(Error::Param(format!("no PNG images in {}", hr_dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let img = centre_crop_to_multiple(&load_png(p)?, 2 * scale)?;
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), img))
        })
        .collect()
}

/// Evaluation set restricted to the kernel-width band [`width_lo`, `width_hi`].
pub fn make_eval_set(
    hr_dir: &Path,
    width_lo: f64,
    width_hi: f64,
    seed: u64,
    base: &SynthConfig,
    isp: &IspConfig,
    out: &Path,
) -> Result<Manifest> {
    let sources = load_hr_dir(hr_dir, base.scale)?;
    let cfg = SynthConfig { seed, ..base.clone() };
    write_dataset(&sources, &cfg, isp, Some((width_lo, width_hi)), out)
}

/// Read access to a complete dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    /// Fails if the manifest is missing, i.e. generation never completed.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let mpath = root.join(MANIFEST);
        if !mpath.exists() {
            return Err(Error::Config(format!(
                "{} has no {MANIFEST}; dataset is incomplete or missing",
                root.display()
            )));
        }
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    pub fn sample_dir(&self, i: usize) -> PathBuf {
        self.root.join(&self.manifest.samples[i].id)
    }

    pub fn load(&self, i: usize) -> Result<BurstSample> {
        if i >= self.len() {
            return Err(Error::Param(format!(
                "sample {i} out of range ({} samples)",
                self.len()
            )));
        }
        load_sample_dir(&self.sample_dir(i))
    }
}

/// Raw frames of a sample directory as N×h×w.
pub fn load_frames(dir: &Path) -> Result<Vec<RawImage>> {
    let path = dir.join("frames.tns");
    let c = TensorContainer::read(&path)?;
    let t = c.require("frames", None)?;
    let [n, h, w]: [usize; 3] = t
        .shape
        .clone()
        .try_into()
        .map_err(|_| Error::format(&path, "frames must be rank 3"))?;
    let arr = Array3::from_shape_vec((n, h, w), t.data.clone()).expect("numel checked on read");
    (0..n)
        .map(|i| RawImage::new(arr.index_axis(ndarray::Axis(0), i).to_owned()))
        .collect()
}

pub fn load_sample_dir(dir: &Path) -> Result<BurstSample> {
    let hr = load_png(dir.join("hr.png"))?;
    let frames = load_frames(dir)?;

    let kpath = dir.join("kernels.tns");
    let kc = TensorContainer::read(&kpath)?;
    let kt = kc.require("kernels", None)?;
    if kt.shape.len() != 3 || kt.shape[0] != frames.len() {
        return Err(Error::format(&kpath, "kernel stack does not match frame count"));
    }
    let ks = kt.shape[1];
    let kernels = kt
        .data
        .chunks_exact(ks * ks)
        .map(|chunk| {
            let v = Array2::from_shape_vec((ks, ks), chunk.iter().map(|&x| f64::from(x)).collect()).unwrap();
            let s = v.sum();
            // f32 storage perturbs the unit sum by ~1e-7; renormalise before validation.
            BlurKernel::new(v / s)
        })
        .collect::<Result<Vec<_>>>()?;

    let spath = dir.join("transforms.json");
    let text = fs::read_to_string(&spath).map_err(|e| Error::io(&spath, e))?;
    let side: SampleSidecar = serde_json::from_str(&text).map_err(|e| Error::format(&spath, e.to_string()))?;
    Ok(BurstSample {
        hr,
        frames,
        kernels,
        kernel_params: side.kernel_params,
        transforms: side.transforms,
        noise: side.noise,
        seed: side.seed,
        sample_index: side.sample_index,
    })
}
