use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of the joint recognizer. Defaults are the toy
/// CPU-trainable configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub hidden: usize,
    pub profile_dim: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub speaker_encoder_layers: usize,
    pub asr_decoder_layers: usize,
    pub speaker_decoder_layers: usize,
    /// Time-head subspace size.
    pub subspace_dim: usize,
    pub frame_period: f64,
    pub init_seed: u64,
}

/// Frame reduction of the two stride-2 front-end layers.
pub const SUBSAMPLE_FACTOR: usize = 4;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feat_dim: 16,
            hidden: 64,
            profile_dim: 16,
            ff_dim: 128,
            heads: 4,
            encoder_layers: 2,
            speaker_encoder_layers: 1,
            asr_decoder_layers: 2,
            speaker_decoder_layers: 2,
            subspace_dim: 16,
            frame_period: 0.01,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feat_dim", self.feat_dim),
            ("hidden", self.hidden),
            ("profile_dim", self.profile_dim),
            ("ff_dim", self.ff_dim),
            ("heads", self.heads),
            ("encoder_layers", self.encoder_layers),
            ("asr_decoder_layers", self.asr_decoder_layers),
            ("speaker_decoder_layers", self.speaker_decoder_layers),
            ("subspace_dim", self.subspace_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("model.{name} must be positive")));
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid("model.hidden must be divisible by model.heads"));
        }
        if !(self.frame_period > 0.0) {
            return Err(Error::invalid("model.frame_period must be positive"));
        }
        Ok(())
    }

    /// Encoder length for `frames` input frames.
    pub fn encoder_frames(frames: usize) -> usize {
        frames.div_ceil(2).div_ceil(2)
    }
}
