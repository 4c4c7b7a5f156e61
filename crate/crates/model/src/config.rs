use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Ablation variants, each adding one component to the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Plain residual features, plain deformable alignment, residual reconstruction.
    A,
    /// + kernel-aware feature blocks
    B,
    /// + channel-attention reconstruction
    C,
    /// + kernel-aware offset prediction
    D,
    /// + three-level pyramid alignment
    E,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::A, Variant::B, Variant::C, Variant::D, Variant::E];

    pub fn letter(self) -> char {
        match self {
            Variant::A => 'A',
            Variant::B => 'B',
            Variant::C => 'C',
            Variant::D => 'D',
            Variant::E => 'E',
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Some(Variant::A),
            "B" => Some(Variant::B),
            "C" => Some(Variant::C),
            "D" => Some(Variant::D),
            "E" => Some(Variant::E),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub n_akab: usize,
    pub n_rcab: usize,
    pub pyramid_levels: usize,
    /// Kernel embedding length; must equal the PCA basis rows.
    pub embed_t: usize,
    /// Output is `scale`× the raw frame size; must be a power of two.
    pub scale: usize,
    pub estimator_blocks: usize,
    pub use_akab: bool,
    pub use_kad: bool,
    pub use_pyramid: bool,
    pub use_rcab: bool,
    /// Add a learned 1×1 projection of the upsampled reference frame to the output.
    pub reference_skip: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            n_akab: 5,
            n_rcab: 5,
            pyramid_levels: 3,
            embed_t: kbnet_core::kernel::DEFAULT_EMBED_DIM,
            scale: 4,
            estimator_blocks: 3,
            use_akab: true,
            use_kad: true,
            use_pyramid: true,
            use_rcab: true,
            reference_skip: true,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, v: Variant) -> Self {
        self.use_akab = v >= Variant::B;
        self.use_rcab = v >= Variant::C;
        self.use_kad = v >= Variant::D;
        self.use_pyramid = v >= Variant::E;
        self
    }

    /// The variant matching the toggles, if they form one of the cumulative ablation steps.
    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL
            .into_iter()
            .find(|&v| self.clone().with_variant(v) == *self)
    }

    /// The kernel estimator exists only when something consumes its embeddings.
    pub fn has_estimator(&self) -> bool {
        self.use_akab || self.use_kad
    }

    pub fn levels(&self) -> usize {
        if self.use_pyramid {
            self.pyramid_levels
        } else {
            1
        }
    }

    /// ×2 pixel-shuffle stages from packed resolution to output resolution.
    pub fn upsample_stages(&self) -> usize {
        (2 * self.scale).trailing_zeros() as usize
    }

    /// Raw frame sides must be multiples of this.
    pub fn raw_multiple(&self) -> usize {
        2 << (self.levels() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.embed_t == 0 || self.estimator_blocks == 0 {
            return Err(ModelError::Config(
                "channel counts and embedding length must be positive".into(),
            ));
        }
        if self.base_channels % 4 != 0 {
            return Err(ModelError::Config(format!(
                "base_channels must be a multiple of 4 (channel-attention reduction), got {}",
                self.base_channels
            )));
        }
        if !self.scale.is_power_of_two() {
            return Err(ModelError::Config(format!(
                "scale must be a power of two, got {}",
                self.scale
            )));
        }
        if self.use_pyramid && self.pyramid_levels == 0 {
            return Err(ModelError::Config("pyramid_levels must be >= 1".into()));
        }
        Ok(())
    }
}
