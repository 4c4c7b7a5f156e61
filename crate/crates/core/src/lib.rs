//! Data side of the burst blind super-resolution toolkit: blur-kernel synthesis
//! and PCA embedding, the simplified RAW camera pipeline, the multi-frame
//! degradation model, deformable-sampling reference code, image metrics, and
//! the on-disk tensor and dataset formats.

pub mod dataset;
pub mod deform;
pub mod error;
pub mod image;
pub mod kernel;
pub mod metrics;
pub mod raw;
pub mod scene;
pub mod synth;
pub mod tns;

pub use error::{Error, Result};

/// Recorded in every output directory and dataset manifest.
pub const TOOLKIT_VERSION: &str = concat!("kbnet ", env!("CARGO_PKG_VERSION"));
