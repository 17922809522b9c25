//! Serialized multi-talker transcripts: speakers' token runs joined by
//! `<sc>` and terminated by a single `<eos>`.

use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use crate::alignment::TimePosterior;
use crate::error::{Error, Result};

/// Inclusive span on the encoder frame axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpan {
    pub start: usize,
    pub end: usize,
}

/// One speaker's token run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SotPart {
    pub speaker: usize,
    pub tokens: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<FrameSpan>>,
}

/// Training target: tokens `Y`, per-token speakers `S`, and frame spans
/// for regular tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedReference {
    pub tokens: Vec<usize>,
    pub speakers: Vec<usize>,
    pub timings: Vec<Option<FrameSpan>>,
}

/// Decoder output; `posteriors` holds start/end distributions for regular
/// tokens when time heads were evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedHypothesis {
    pub tokens: Vec<usize>,
    pub speakers: Vec<usize>,
    pub timings: Vec<Option<FrameSpan>>,
    #[serde(skip)]
    pub posteriors: Vec<Option<TimePosterior>>,
    pub encoder_frames: usize,
}

/// Joins speaker runs into one sequence.
///
/// Runs are ordered by their first token's start frame when every run is
/// timed (stable for ties), otherwise kept in the given order. Empty runs are
/// skipped. `<sc>` is attributed to the following speaker and `<eos>` to the
/// last one.
pub fn serialize_sot(parts: &[SotPart], vocab: &Vocabulary) -> Result<SerializedReference> {
    let mut order: Vec<&SotPart> = parts.iter().filter(|p| !p.tokens.is_empty()).collect();
    for (i, p) in order.iter().enumerate() {
        if order[..i].iter().any(|q| q.speaker == p.speaker) {
            return Err(Error::invalid(format!("speaker {} has more than one run", p.speaker)));
        }
        if p.tokens.iter().any(|&t| t >= vocab.len() || vocab.is_special(t)) {
            return Err(Error::invalid("runs may only hold regular tokens"));
        }
        if let Some(t) = &p.timings {
            if t.len() != p.tokens.len() {
                return Err(Error::Shape(format!("{} timings for {} tokens", t.len(), p.tokens.len())));
            }
        }
    }
    if order.iter().all(|p| p.timings.is_some()) {
        order.sort_by_key(|p| p.timings.as_ref().map_or(0, |t| t[0].start));
    }
    let mut out = SerializedReference { tokens: Vec::new(), speakers: Vec::new(), timings: Vec::new() };
    for (i, p) in order.iter().enumerate() {
        if i > 0 {
            out.tokens.push(vocab.sc());
            out.speakers.push(p.speaker);
            out.timings.push(None);
        }
        for (j, &t) in p.tokens.iter().enumerate() {
            out.tokens.push(t);
            out.speakers.push(p.speaker);
            out.timings.push(p.timings.as_ref().map(|ts| ts[j]));
        }
    }
    out.tokens.push(vocab.eos());
    out.speakers.push(order.last().map_or(0, |p| p.speaker));
    out.timings.push(None);
    Ok(out)
}

/// Groups regular tokens by their per-token speaker, speakers in order of
/// first appearance. Tokens after the first `<eos>` are ignored.
pub fn deserialize_sot(tokens: &[usize], speakers: &[usize], timings: &[Option<FrameSpan>], vocab: &Vocabulary) -> Vec<SotPart> {
    let mut parts: Vec<SotPart> = Vec::new();
    let timed = timings.len() == tokens.len() && !tokens.is_empty();
    for (i, (&t, &s)) in tokens.iter().zip(speakers).enumerate() {
        if t == vocab.eos() {
            break;
        }
        if vocab.is_special(t) {
            continue;
        }
        let idx = match parts.iter().position(|p| p.speaker == s) {
            Some(i) => i,
            None => {
                parts.push(SotPart { speaker: s, tokens: Vec::new(), timings: timed.then(Vec::new) });
                parts.len() - 1
            }
        };
        parts[idx].tokens.push(t);
        if let (Some(ts), Some(Some(span))) = (parts[idx].timings.as_mut(), timings.get(i).map(|x| x.as_ref())) {
            ts.push(*span);
        } else {
            parts[idx].timings = None;
        }
    }
    parts
}

impl SerializedReference {
    /// Checks the sequence invariants; `num_profiles` and `encoder_frames`
    /// bound speaker indices and timing frames when given.
    pub fn validate(&self, vocab: &Vocabulary, num_profiles: Option<usize>, encoder_frames: Option<usize>) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 || self.speakers.len() != n || self.timings.len() != n {
            return Err(Error::Shape("tokens, speakers and timings must share a nonzero length".into()));
        }
        if self.tokens.iter().filter(|&&t| t == vocab.eos()).count() != 1 || self.tokens[n - 1] != vocab.eos() {
            return Err(Error::invalid("exactly one <eos>, at the end"));
        }
        let mut run_speaker: Option<usize> = None;
        for i in 0..n {
            let t = self.tokens[i];
            if t >= vocab.len() {
                return Err(Error::Index(format!("token {t}")));
            }
            if let Some(k) = num_profiles {
                if self.speakers[i] >= k {
                    return Err(Error::Index(format!("speaker {} with {k} profiles", self.speakers[i])));
                }
            }
            if vocab.is_special(t) {
                if self.timings[i].is_some() {
                    return Err(Error::invalid("special tokens carry no timing"));
                }
                if t == vocab.sc() {
                    run_speaker = None;
                }
                continue;
            }
            match run_speaker {
                Some(s) if s != self.speakers[i] => {
                    return Err(Error::invalid("speaker changes without <sc>"));
                }
                _ => run_speaker = Some(self.speakers[i]),
            }
            match (self.timings[i], encoder_frames) {
                (None, _) => return Err(Error::invalid("regular token without timing")),
                (Some(sp), Some(l)) if sp.start > sp.end || sp.end >= l => {
                    return Err(Error::invalid(format!("timing {sp:?} outside {l} frames")));
                }
                (Some(sp), None) if sp.start > sp.end => return Err(Error::invalid("start after end")),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn parts(&self, vocab: &Vocabulary) -> Vec<SotPart> {
        deserialize_sot(&self.tokens, &self.speakers, &self.timings, vocab)
    }
}

impl SerializedHypothesis {
    pub fn parts(&self, vocab: &Vocabulary) -> Vec<SotPart> {
        deserialize_sot(&self.tokens, &self.speakers, &self.timings, vocab)
    }
}
