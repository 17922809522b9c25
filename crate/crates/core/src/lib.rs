//! Speaker-attributed recognition with learned token timing, wrapped in a
//! diarization pipeline with DER and cpWER scoring.

pub mod alignment;
pub mod error;
pub mod formats;
pub mod io;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
