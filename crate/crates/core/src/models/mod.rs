//! The attack networks: attentional encoder, the two generators, the PatchGAN
//! critic, and the frozen face-embedding networks that play the instance
//! discriminator.

pub mod checkpoint;
pub mod critic;
pub mod embedder;
pub mod encoder;
pub mod generator;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use critic::Critic;
pub use embedder::{
    train_reference_embedder, Embedder, EmbedderConfig, EmbedderTrainConfig, EmbeddingVector,
    InstanceDiscriminator, Mode, VerificationSummary,
};
pub use encoder::{Encoder, EncoderMode, LatentCode};
pub use generator::{broadcast_concat, Generator};

/// Length of the latent identity code.
pub const LATENT_DIM: usize = 7;

/// Image channels (RGB).
pub const IMAGE_CHANNELS: usize = 3;

/// Which attention blocks are present (the four ablation variants).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub geometric_attention: bool,
    pub channel_attention: bool,
}

impl Ablation {
    pub const BASELINE: Self = Self { geometric_attention: false, channel_attention: false };
    pub const BOTH: Self = Self { geometric_attention: true, channel_attention: true };

    pub fn all() -> [Self; 4] {
        [
            Self::BASELINE,
            Self { geometric_attention: true, channel_attention: false },
            Self { geometric_attention: false, channel_attention: true },
            Self::BOTH,
        ]
    }

    pub fn label(&self) -> &'static str {
        match (self.geometric_attention, self.channel_attention) {
            (false, false) => "baseline",
            (true, false) => "geometric",
            (false, true) => "channel-wise",
            (true, true) => "both",
        }
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Self::BOTH
    }
}

/// Architecture hyper-parameters shared by E, G1, G2 and D1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Generator stem width; the trunk runs at 4× this.
    pub gen_base: usize,
    pub gen_res_blocks: usize,
    pub gen_stem_kernel: usize,
    pub enc_base: usize,
    pub disc_base: usize,
    /// Number of stride-2 layers in the critic.
    pub disc_layers: usize,
    pub se_reduction: usize,
    pub ablation: Ablation,
}

impl ModelConfig {
    /// 112×112 configuration with the full channel plan.
    pub fn full() -> Self {
        Self {
            image_size: 112,
            gen_base: 64,
            gen_res_blocks: 6,
            gen_stem_kernel: 7,
            enc_base: 64,
            disc_base: 64,
            disc_layers: 6,
            se_reduction: 16,
            ablation: Ablation::BOTH,
        }
    }

    /// 32×32 configuration sized for a single CPU core.
    pub fn desk() -> Self {
        Self {
            image_size: 32,
            gen_base: 8,
            gen_res_blocks: 4,
            gen_stem_kernel: 3,
            enc_base: 8,
            disc_base: 8,
            disc_layers: 4,
            se_reduction: 2,
            ablation: Ablation::BOTH,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}
