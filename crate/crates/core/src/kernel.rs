//! Anisotropic Gaussian blur kernels and their PCA embedding.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tns::TensorContainer;

pub const KERNEL_SIZE: usize = 31;
pub const KERNEL_LEN: usize = KERNEL_SIZE * KERNEL_SIZE;
pub const TRAIN_WIDTH_RANGE: (f64, f64) = (0.6, 5.0);
pub const DEFAULT_EMBED_DIM: usize = 15;
pub const DEFAULT_PCA_CORPUS: usize = 10_000;
pub const DEFAULT_PCA_SEED: u64 = 20_220_421;
/// Smallest corpus `fit_pca` accepts.
pub const MIN_PCA_CORPUS: usize = 1000;
/// Widths below this are treated as a degenerate covariance.
pub const MIN_SIGMA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub theta: f64,
}

impl KernelParams {
    pub fn isotropic(sigma: f64) -> Self {
        Self {
            sigma1: sigma,
            sigma2: sigma,
            theta: 0.0,
        }
    }
}

/// Draws widths independently from U[lo, hi] and the angle from U[-π, π].
pub fn sample_kernel_params(width_lo: f64, width_hi: f64, rng: &mut impl Rng) -> Result<KernelParams> {
    if !(width_lo > 0.0 && width_lo <= width_hi && width_hi.is_finite()) {
        return Err(Error::Param(format!(
            "kernel width range must satisfy 0 < lo <= hi, got [{width_lo}, {width_hi}]"
        )));
    }
    let mut width = || {
        if width_lo == width_hi {
            width_lo
        } else {
            rng.random_range(width_lo..=width_hi)
        }
    };
    let sigma1 = width();
    let sigma2 = width();
    let theta = rng.random_range(-PI..=PI);
    Ok(KernelParams { sigma1, sigma2, theta })
}

/// Normalised non-negative blur kernel on an odd square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel(Array2<f64>);

impl BlurKernel {
    /// Wraps raw weights, checking shape, sign and unit mass (1e-6).
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (h, w) = values.dim();
        if h != w || h % 2 == 0 {
            return Err(Error::Shape(format!("kernel must be odd and square, got {h}x{w}")));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Param("kernel weights must be finite and non-negative".into()));
        }
        let sum: f64 = values.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Param(format!("kernel must sum to 1, sums to {sum}")));
        }
        Ok(Self(values))
    }

    /// Single unit weight at the centre.
    pub fn delta(size: usize) -> Self {
        let mut v = Array2::zeros((size, size));
        v[[size / 2, size / 2]] = 1.0;
        Self(v)
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

/// Rasterises exp(-½ dᵀΣ⁻¹d) with Σ = R(θ)·diag(σ1², σ2²)·R(θ)ᵀ, centred on the grid, normalised to sum 1.
pub fn make_anisotropic_gaussian(params: KernelParams, size: usize) -> Result<BlurKernel> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::Param(format!("kernel size must be odd and >= 3, got {size}")));
    }
    let KernelParams { sigma1, sigma2, theta } = params;
    if !(sigma1.is_finite() && sigma2.is_finite() && sigma1 > MIN_SIGMA && sigma2 > MIN_SIGMA) {
        return Err(Error::Param(format!(
            "kernel covariance is singular for widths ({sigma1}, {sigma2})"
        )));
    }
    if !theta.is_finite() {
        return Err(Error::Param("kernel angle must be finite".into()));
    }
    // Σ⁻¹ = R·diag(1/σ1², 1/σ2²)·Rᵀ
    let (s, c) = theta.sin_cos();
    let (a, b) = (1.0 / (sigma1 * sigma1), 1.0 / (sigma2 * sigma2));
    let inv00 = c * c * a + s * s * b;
    let inv01 = c * s * (a - b);
    let inv11 = s * s * a + c * c * b;

    let centre = (size as f64 - 1.0) / 2.0;
    let mut grid = Array2::from_shape_fn((size, size), |(r, col)| {
        let dy = r as f64 - centre;
        let dx = col as f64 - centre;
        (-0.5 * (inv00 * dy * dy + 2.0 * inv01 * dy * dx + inv11 * dx * dx)).exp()
    });
    let sum = grid.sum();
    grid.mapv_inplace(|v| v / sum);
    Ok(BlurKernel(grid))
}

/// Draws `n` kernels from the given width band with a seeded generator.
pub fn sample_corpus(n: usize, width_lo: f64, width_hi: f64, seed: u64) -> Result<Vec<BlurKernel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| make_anisotropic_gaussian(sample_kernel_params(width_lo, width_hi, &mut rng)?, KERNEL_SIZE))
        .collect()
}

/// t-dimensional projection of a kernel onto a [`KernelPca`] basis.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEmbedding(pub Vec<f64>);

impl KernelEmbedding {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Provenance stored alongside a fitted basis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PcaProvenance {
    pub corpus_seed: u64,
    pub corpus_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelPca {
    mean: Vec<f64>,
    /// t rows of length `dim`, row-major.
    basis: Vec<f64>,
    t: usize,
    dim: usize,
    pub provenance: PcaProvenance,
}

impl KernelPca {
    /// Top-`t` principal directions of the corpus, in descending eigenvalue order.
    ///
    /// Each basis row is sign-normalised so that its first non-negligible
    /// component is positive, which makes the result independent of the
    /// eigen-solver's arbitrary sign choice.
    pub fn fit(corpus: &[BlurKernel], t: usize) -> Result<Self> {
        let n = corpus.len();
        if n < MIN_PCA_CORPUS {
            return Err(Error::Param(format!(
                "PCA corpus needs at least {MIN_PCA_CORPUS} kernels, got {n}"
            )));
        }
        let dim = corpus[0].values().len();
        if corpus.iter().any(|k| k.values().len() != dim) {
            return Err(Error::Shape("PCA corpus kernels differ in size".into()));
        }
        // Centred data has rank at most min(n - 1, dim).
        let max_rank = (n - 1).min(dim);
        if t == 0 || t > max_rank {
            return Err(Error::Param(format!(
                "embedding dimension {t} exceeds corpus rank bound {max_rank}"
            )));
        }

        let mut mean = vec![0.0; dim];
        for k in corpus {
            for (m, v) in mean.iter_mut().zip(k.values().iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let centred = DMatrix::from_fn(n, dim, |i, j| corpus[i].values().as_slice().unwrap()[j] - mean[j]);
        let cov = centred.tr_mul(&centred) / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);

        let mut order: Vec<usize> = (0..dim).collect();
        // Stable sort on descending eigenvalue keeps ties in solver order, which is deterministic.
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut basis = Vec::with_capacity(t * dim);
        for &col in order.iter().take(t) {
            let v = eig.eigenvectors.column(col);
            let scale = v.amax();
            let pivot = v.iter().find(|x| x.abs() > 1e-9 * scale).copied().unwrap_or(1.0);
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            basis.extend(v.iter().map(|x| sign * x));
        }
        Ok(Self {
            mean,
            basis,
            t,
            dim,
            provenance: PcaProvenance {
                corpus_seed: 0,
                corpus_size: n,
            },
        })
    }

    /// Samples a seeded corpus from the training width band and fits it.
    pub fn fit_seeded(corpus_size: usize, t: usize, width: (f64, f64), seed: u64) -> Result<Self> {
        let corpus = sample_corpus(corpus_size, width.0, width.1, seed)?;
        let mut pca = Self::fit(&corpus, t)?;
        pca.provenance = PcaProvenance {
            corpus_seed: seed,
            corpus_size,
        };
        Ok(pca)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        &self.basis[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major t×dim basis.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    pub fn kernel_size(&self) -> usize {
        (self.dim as f64).sqrt().round() as usize
    }

    pub fn project(&self, kernel: &BlurKernel) -> Result<KernelEmbedding> {
        if kernel.values().len() != self.dim {
            return Err(Error::Shape(format!(
                "kernel has {} weights, PCA expects {}",
                kernel.values().len(),
                self.dim
            )));
        }
        let centred: Vec<f64> = kernel.values().iter().zip(&self.mean).map(|(k, m)| k - m).collect();
        Ok(KernelEmbedding(
            (0..self.t)
                .map(|i| self.basis_row(i).iter().zip(&centred).map(|(b, c)| b * c).sum())
                .collect(),
        ))
    }

    /// mean + basisᵀ·emb as a square grid. Not renormalised.
    pub fn reconstruct(&self, emb: &KernelEmbedding) -> Result<Array2<f64>> {
        if emb.len() != self.t {
            return Err(Error::Shape(format!(
                "embedding has length {}, PCA has t = {}",
                emb.len(),
                self.t
            )));
        }
        let mut out = self.mean.clone();
        for (i, e) in emb.0.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.basis_row(i)) {
                *o += e * b;
            }
        }
        let s = self.kernel_size();
        Ok(Array2::from_shape_vec((s, s), out).expect("dim is a square"))
    }

    /// Same basis truncated to its first `t` rows.
    pub fn truncated(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.t {
            return Err(Error::Param(format!("cannot truncate t = {} to {t}", self.t)));
        }
        Ok(Self {
            mean: self.mean.clone(),
            basis: self.basis[..t * self.dim].to_vec(),
            t,
            dim: self.dim,
            provenance: self.provenance,
        })
    }

    pub fn to_container(&self) -> TensorContainer {
        let mut c = TensorContainer::new();
        c.insert("mean", &[self.dim], self.mean.iter().map(|&v| v as f32).collect())
            .expect("shape matches");
        c.insert(
            "basis",
            &[self.t, self.dim],
            self.basis.iter().map(|&v| v as f32).collect(),
        )
        .expect("shape matches");
        c.set_meta("kind", Value::from("kernel_pca"));
        c.set_meta("t", Value::from(self.t));
        c.set_meta("kernel_size", Value::from(self.kernel_size()));
        c.set_meta("corpus_seed", Value::from(self.provenance.corpus_seed));
        c.set_meta("corpus_size", Value::from(self.provenance.corpus_size));
        c
    }

    pub fn from_container(c: &TensorContainer, path: &Path) -> Result<Self> {
        let meta_usize = |k: &str| {
            c.meta()
                .get(k)
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::format(path, format!("missing integer metadata `{k}`")))
        };
        let t = meta_usize("t")? as usize;
        let mean = c.require("mean", None)?;
        let dim = mean.numel();
        let basis = c.require("basis", Some(&[t, dim]))?;
        Ok(Self {
            mean: mean.data.iter().map(|&v| v as f64).collect(),
            basis: basis.data.iter().map(|&v| v as f64).collect(),
            t,
            dim,
            provenance: PcaProvenance {
                corpus_seed: meta_usize("corpus_seed")?,
                corpus_size: meta_usize("corpus_size")? as usize,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_container(&TensorContainer::read(path)?, path)
    }

    /// SHA-256 over the f32 payload as persisted; a fitted basis and its reloaded copy agree.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.t as u64).to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        for v in self.mean.iter().chain(&self.basis) {
            h.update((*v as f32).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
