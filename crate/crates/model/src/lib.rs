//! Kernel-aware burst super-resolution network and its training loop.

pub mod akab;
pub mod align;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod layers;
pub mod loss;
pub mod network;
pub mod ops;
pub mod optim;
pub mod params;
pub mod recon;
pub mod train;

pub use config::{ModelConfig, Variant};
pub use error::{ModelError, Result};
pub use network::{ForwardOutput, KbNet};
pub use train::{TrainConfig, Trainer};
