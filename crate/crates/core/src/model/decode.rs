use super::features::AcousticFeatures;
use super::profiles::ProfileSet;
use super::sa_asr::{Encoded, SaAsr};
use super::sot::{FrameSpan, SerializedHypothesis};
use crate::alignment::posteriors_from_logits;
use crate::error::{Error, Result};
use crate::numeric::{argmax, Graph, Real, Tensor};

/// Greedy decoding output with the per-step profile weights.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub hypothesis: SerializedHypothesis,
    /// `beta_n` for every emitted token.
    pub speaker_weights: Vec<Vec<f64>>,
}

fn row_softmax<T: Real>(t: &Tensor<T>, row: usize) -> Result<Vec<f64>> {
    Ok(crate::numeric::softmax(t.row(row))?.into_iter().map(Real::f64).collect())
}

impl<T: Real> SaAsr<T> {
    /// Greedy joint decoding: at each step the next token is the argmax of
    /// `o_n` and its speaker the argmax of `beta_n`. Stops after `<eos>` or
    /// `max_len` tokens. Regular tokens get argmax start/end frames.
    pub fn greedy_decode(&self, features: &AcousticFeatures, profiles: &ProfileSet, max_len: usize) -> Result<Decoded> {
        if max_len == 0 {
            return Err(Error::invalid("max_len must be positive"));
        }
        let (h_asr, h_spk) = self.encode_values(features)?;
        let encoder_frames = h_asr.rows();
        let vocab = self.vocab();
        let mut prefix = vec![vocab.eos()];
        let mut tokens = Vec::new();
        let mut speakers = Vec::new();
        let mut speaker_weights = Vec::new();
        loop {
            let mut g = Graph::new();
            let enc = Encoded { asr: g.constant(h_asr.clone()), spk: g.constant(h_spk.clone()) };
            let q = self.speaker_queries(&mut g, &prefix, &enc)?;
            let pa = self.profile_attention(&mut g, q, profiles)?;
            let dec = self.asr_decode(&mut g, &prefix, enc.asr, pa.weighted_profile)?;
            let last = prefix.len() - 1;
            let o = row_softmax(g.value(dec.logits), last)?;
            let beta: Vec<f64> = g.value(pa.weights).row(last).iter().map(|v| v.f64()).collect();
            let y = argmax(&o);
            tokens.push(y);
            speakers.push(argmax(&beta));
            speaker_weights.push(beta);
            if y == vocab.eos() || tokens.len() >= max_len {
                break;
            }
            prefix.push(y);
        }
        let mut g = Graph::new();
        let enc = Encoded { asr: g.constant(h_asr), spk: g.constant(h_spk) };
        let q = self.speaker_queries(&mut g, &prefix, &enc)?;
        let pa = self.profile_attention(&mut g, q, profiles)?;
        let dec = self.asr_decode(&mut g, &prefix, enc.asr, pa.weighted_profile)?;
        let logits = self.time_heads().logits(&mut g, &self.params, &dec.time_queries, enc.asr)?;
        let post = posteriors_from_logits(g.value(logits.start), g.value(logits.end))?;
        let mut posteriors = Vec::with_capacity(tokens.len());
        let mut timings = Vec::with_capacity(tokens.len());
        for (&t, p) in tokens.iter().zip(post) {
            if vocab.is_special(t) {
                posteriors.push(None);
                timings.push(None);
            } else {
                timings.push(Some(FrameSpan { start: p.start_frame(), end: p.end_frame() }));
                posteriors.push(Some(p));
            }
        }
        Ok(Decoded {
            hypothesis: SerializedHypothesis { tokens, speakers, timings, posteriors, encoder_frames },
            speaker_weights,
        })
    }
}
