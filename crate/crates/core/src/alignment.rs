//! Token start/end estimation from the recognizer's decoder.
//!
//! For every decoder layer the pre-source-attention state is projected into
//! a small subspace and compared against the projected encoder frames; the
//! per-layer scores are summed before one softmax over frames. Separate
//! projection pairs produce the start and the end distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FrameSpan;
use crate::numeric::{argmax, Graph, NodeId, ParamId, ParamStore, Real, Tensor};

/// Four `f^h x f^se` projections of one decoder layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeHeadLayer {
    pub start_query: ParamId,
    pub start_key: ParamId,
    pub end_query: ParamId,
    pub end_key: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeHeads {
    pub layers: Vec<TimeHeadLayer>,
    pub subspace_dim: usize,
}

/// Pre-softmax start and end scores, `tokens x frames`.
#[derive(Debug, Clone, Copy)]
pub struct TimeLogits {
    pub start: NodeId,
    pub end: NodeId,
}

/// Start and end distributions over encoder frames for one token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePosterior {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl TimePosterior {
    pub fn start_frame(&self) -> usize {
        argmax(&self.start)
    }

    pub fn end_frame(&self) -> usize {
        argmax(&self.end)
    }
}

impl TimeHeads {
    /// Query projections start at zero so the initial distributions are
    /// uniform; key projections are drawn uniformly so the query side still
    /// receives gradient.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        hidden: usize,
        subspace_dim: usize,
        num_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| TimeHeadLayer {
                start_query: store.insert_const(&format!("time.l{l}.start_q"), &[hidden, subspace_dim], 0.0),
                start_key: store.insert_uniform(&format!("time.l{l}.start_k"), &[hidden, subspace_dim], hidden, rng),
                end_query: store.insert_const(&format!("time.l{l}.end_q"), &[hidden, subspace_dim], 0.0),
                end_key: store.insert_uniform(&format!("time.l{l}.end_k"), &[hidden, subspace_dim], hidden, rng),
            })
            .collect();
        TimeHeads { layers, subspace_dim }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.start_query, l.start_key, l.end_query, l.end_key]).collect()
    }

    /// Scores for every query row against every encoder frame, accumulated
    /// over layers.
    pub fn logits<T: Real>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        queries: &[NodeId],
        encoded: NodeId,
    ) -> Result<TimeLogits> {
        if queries.len() != self.layers.len() {
            return Err(Error::Shape(format!("{} query layers for {} time-head layers", queries.len(), self.layers.len())));
        }
        let scale = T::one() / T::of(self.subspace_dim as f64).sqrt();
        let mut sums: [Option<NodeId>; 2] = [None, None];
        for (layer, &z) in self.layers.iter().zip(queries) {
            for (slot, (wq, wk)) in sums.iter_mut().zip([(layer.start_query, layer.start_key), (layer.end_query, layer.end_key)])
            {
                let wq = g.param(s, wq);
                let wk = g.param(s, wk);
                let q = g.matmul(z, wq)?;
                let k = g.matmul(encoded, wk)?;
                let scores = g.matmul_t(q, k, false, true)?;
                *slot = Some(match *slot {
                    None => scores,
                    Some(acc) => g.add(acc, scores)?,
                });
            }
        }
        let start = g.scale(sums[0].expect("at least one layer"), scale);
        let end = g.scale(sums[1].expect("at least one layer"), scale);
        Ok(TimeLogits { start, end })
    }

    /// Start/end posteriors for every query row, from recorded per-layer
    /// query states and encoder output.
    pub fn posteriors<T: Real>(
        &self,
        s: &ParamStore<T>,
        queries: &[Tensor<T>],
        encoded: &Tensor<T>,
    ) -> Result<Vec<TimePosterior>> {
        let mut g = Graph::new();
        let qs: Vec<NodeId> = queries.iter().map(|q| g.constant(q.clone())).collect();
        let h = g.constant(encoded.clone());
        let logits = self.logits(&mut g, s, &qs, h)?;
        posteriors_from_logits(g.value(logits.start), g.value(logits.end))
    }
}

/// Row-wise softmax of start/end score matrices.
pub fn posteriors_from_logits<T: Real>(start: &Tensor<T>, end: &Tensor<T>) -> Result<Vec<TimePosterior>> {
    (0..start.rows())
        .map(|i| {
            let s = crate::numeric::softmax(start.row(i))?;
            let e = crate::numeric::softmax(end.row(i))?;
            Ok(TimePosterior { start: s.into_iter().map(Real::f64).collect(), end: e.into_iter().map(Real::f64).collect() })
        })
        .collect()
}

/// Summed cross entropy of start and end distributions against reference
/// frames; rows without a timing (special tokens) contribute nothing.
pub fn time_ce_loss<T: Real>(g: &mut Graph<T>, logits: &TimeLogits, timings: &[Option<FrameSpan>]) -> Result<NodeId> {
    let frames = g.value(logits.start).cols();
    for sp in timings.iter().flatten() {
        if sp.start >= frames || sp.end >= frames {
            return Err(Error::Index(format!("reference span {sp:?} outside {frames} frames")));
        }
    }
    let starts: Vec<Option<usize>> = timings.iter().map(|t| t.map(|s| s.start)).collect();
    let ends: Vec<Option<usize>> = timings.iter().map(|t| t.map(|s| s.end)).collect();
    let a = g.cross_entropy(logits.start, &starts)?;
    let b = g.cross_entropy(logits.end, &ends)?;
    g.add(a, b)
}

/// Same loss evaluated directly on posteriors.
pub fn time_ce_value(posteriors: &[Option<TimePosterior>], timings: &[Option<FrameSpan>]) -> Result<f64> {
    let mut total = 0.0;
    for (p, t) in posteriors.iter().zip(timings) {
        if let (Some(p), Some(t)) = (p, t) {
            total += crate::numeric::cross_entropy(&p.start, t.start)?;
            total += crate::numeric::cross_entropy(&p.end, t.end)?;
        } else if t.is_some() {
            return Err(Error::invalid("timed token without posterior"));
        }
    }
    Ok(total)
}

/// Seconds of the argmax start and end frames. End before start is kept.
pub fn infer_token_times(posterior: &TimePosterior, frame_period: f64, subsample_factor: usize) -> (f64, f64) {
    let step = frame_period * subsample_factor as f64;
    (posterior.start_frame() as f64 * step, posterior.end_frame() as f64 * step)
}

const ROUNDING_SLACK: f64 = 1e-9;

/// Encoder-frame span of an interval given in seconds: the start frame is
/// the one containing `start_sec`, the end frame the last one that begins
/// before `end_sec`; both are clamped into `[0, encoder_frames)`.
pub fn map_reference_frames(
    start_sec: f64,
    end_sec: f64,
    frame_period: f64,
    subsample_factor: usize,
    encoder_frames: usize,
) -> Result<FrameSpan> {
    if start_sec < 0.0 || end_sec < 0.0 {
        return Err(Error::invalid(format!("negative time ({start_sec}, {end_sec})")));
    }
    if encoder_frames == 0 {
        return Err(Error::invalid("no encoder frames"));
    }
    let step = frame_period * subsample_factor as f64;
    let last = encoder_frames - 1;
    let start = ((start_sec / step + ROUNDING_SLACK).floor() as usize).min(last);
    let end_raw = (end_sec / step - ROUNDING_SLACK).ceil() as i64 - 1;
    let end = (end_raw.max(start as i64) as usize).clamp(start, last);
    Ok(FrameSpan { start, end })
}

/// Splits a word interval into `parts` equal consecutive sub-intervals.
pub fn split_word_span(start_sec: f64, end_sec: f64, parts: usize) -> Vec<(f64, f64)> {
    let step = (end_sec - start_sec) / parts.max(1) as f64;
    (0..parts)
        .map(|i| (start_sec + step * i as f64, if i + 1 == parts { end_sec } else { start_sec + step * (i + 1) as f64 }))
        .collect()
}
