use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Frame-synchronous features, one row per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticFeatures {
    frames: Tensor<f64>,
    pub frame_period: f64,
}

impl AcousticFeatures {
    pub fn new(frames: Tensor<f64>, frame_period: f64) -> Result<Self> {
        if frames.shape().len() != 2 || frames.rows() == 0 {
            return Err(Error::invalid("features need at least one frame"));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("features"));
        }
        Ok(AcousticFeatures { frames, frame_period })
    }

    pub fn frames(&self) -> &Tensor<f64> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn duration(&self) -> f64 {
        self.num_frames() as f64 * self.frame_period
    }

    /// Frames `[start, end)`, clamped to the available range.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let end = end.min(self.num_frames());
        if start >= end {
            return Err(Error::invalid(format!("empty frame range {start}..{end}")));
        }
        let d = self.dim();
        let data = self.frames.data()[start * d..end * d].to_vec();
        Self::new(Tensor::matrix(end - start, d, data)?, self.frame_period)
    }

    /// Frame index containing time `t`.
    pub fn frame_at(&self, t: f64) -> usize {
        ((t / self.frame_period) + 1e-9).floor().max(0.0) as usize
    }
}
