//! The joint recognizer and its data types.

pub mod config;
mod decode;
pub mod features;
pub mod profiles;
pub mod sa_asr;
pub mod sot;
pub mod vocab;

pub use config::{ModelConfig, SUBSAMPLE_FACTOR};
pub use decode::Decoded;
pub use features::AcousticFeatures;
pub use profiles::{ProfileSet, SpeakerProfile};
pub use sa_asr::{AsrDecoded, Encoded, Forward, LossNodes, ModelMeta, ProfileAttention, SaAsr};
pub use sot::{deserialize_sot, serialize_sot, FrameSpan, SerializedHypothesis, SerializedReference, SotPart};
pub use vocab::Vocabulary;
