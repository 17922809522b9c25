//! Synthetic multi-talker corpus. Frames are abstract vectors: the first
//! `signature_dims` entries carry the speaker signature, the rest the token
//! pattern, plus Gaussian noise. Utterances are overlaid with controlled
//! delays and come with exact word timings.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::map_reference_frames;
use crate::error::{Error, Result};
use crate::io::{read_features, write_atomic, write_features};
use crate::model::{
    serialize_sot, AcousticFeatures, ModelConfig, ProfileSet, SerializedReference, SotPart, SpeakerProfile, Vocabulary,
    SUBSAMPLE_FACTOR,
};
use crate::numeric::Tensor;
use crate::pipeline::{DiarSegment, Transcript, TranscriptWord};

pub const MAX_SPEAKERS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub feat_dim: usize,
    pub signature_dims: usize,
    pub profile_dim: usize,
    pub inventory_size: usize,
    pub inventory_seed: u64,
    pub min_speakers: usize,
    pub max_speakers: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_token_frames: usize,
    pub max_token_frames: usize,
    pub noise_std: f64,
    pub signature_max_cosine: f64,
    pub token_max_cosine: f64,
    pub overlap_prob: f64,
    /// Largest overlap as a fraction of the shorter of two consecutive
    /// utterances.
    pub max_overlap_ratio: f64,
    pub max_gap_sec: f64,
    /// Leading and trailing silence are each drawn from `[0, edge_silence_sec]`.
    pub edge_silence_sec: f64,
    pub max_distractors: usize,
    pub profile_noise: f64,
    pub frame_period: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            feat_dim: 16,
            signature_dims: 8,
            profile_dim: 16,
            inventory_size: 20,
            inventory_seed: 0,
            min_speakers: 1,
            max_speakers: 5,
            min_tokens: 2,
            max_tokens: 6,
            min_token_frames: 3,
            max_token_frames: 10,
            noise_std: 0.1,
            signature_max_cosine: 0.3,
            token_max_cosine: 0.8,
            overlap_prob: 0.9,
            max_overlap_ratio: 0.5,
            max_gap_sec: 1.0,
            edge_silence_sec: 0.2,
            max_distractors: 2,
            profile_noise: 0.05,
            frame_period: 0.01,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synth.{m}")));
        if self.signature_dims == 0 || self.signature_dims >= self.feat_dim {
            return bad("signature_dims must be in [1, feat_dim)");
        }
        if self.profile_dim < self.signature_dims {
            return bad("profile_dim must be at least signature_dims");
        }
        if self.min_speakers == 0 || self.min_speakers > self.max_speakers || self.max_speakers > MAX_SPEAKERS {
            return bad("speaker counts must satisfy 1 <= min_speakers <= max_speakers <= 5");
        }
        if self.max_speakers + self.max_distractors > self.inventory_size {
            return bad("inventory_size must cover max_speakers + max_distractors");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("token counts must satisfy 1 <= min_tokens <= max_tokens");
        }
        if self.min_token_frames == 0 || self.min_token_frames > self.max_token_frames {
            return bad("token frames must satisfy 1 <= min_token_frames <= max_token_frames");
        }
        if !(0.0..=1.0).contains(&self.overlap_prob) || !(0.0..1.0).contains(&self.max_overlap_ratio) {
            return bad("overlap_prob must be in [0, 1] and max_overlap_ratio in [0, 1)");
        }
        let nonneg = [self.noise_std, self.max_gap_sec, self.edge_silence_sec, self.profile_noise];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("noise, gap and silence settings must be finite and nonnegative");
        }
        if !(self.frame_period > 0.0) {
            return bad("frame_period must be positive");
        }
        if !(self.signature_max_cosine > 0.0) || !(self.token_max_cosine > 0.0) {
            return bad("cosine limits must be positive");
        }
        Ok(())
    }

    fn secs_to_frames(&self, s: f64) -> usize {
        (s / self.frame_period + 1e-9).floor() as usize
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        if normalize(&mut v) > 1e-6 {
            return v;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rejection-samples `count` unit vectors with pairwise cosine below `max_cos`.
fn separated_units(count: usize, dim: usize, max_cos: f64, rng: &mut impl Rng, what: &str) -> Result<Vec<Vec<f64>>> {
    const ATTEMPTS: usize = 200_000;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let v = random_unit(dim, rng);
            if out.iter().all(|u| dot(u, &v) < max_cos) {
                out.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(format!("cannot place {count} {what} in {dim} dims with cosine < {max_cos}")));
        }
    }
    Ok(out)
}

/// Maps the speaker part of a frame mean to a unit profile through a fixed
/// matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileExtractor {
    pub signature_dims: usize,
    pub profile_dim: usize,
    /// `profile_dim x signature_dims`, row-major.
    pub projection: Vec<f64>,
}

impl ProfileExtractor {
    pub fn new(signature_dims: usize, profile_dim: usize, seed: u64) -> Result<Self> {
        if signature_dims == 0 || profile_dim < signature_dims {
            return Err(Error::invalid("profile_dim must be at least signature_dims"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        // Gram-Schmidt over random columns.
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(signature_dims);
        while cols.len() < signature_dims {
            let mut c = random_unit(profile_dim, &mut rng);
            for u in &cols {
                let d = dot(u, &c);
                c.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
            }
            if normalize(&mut c) > 1e-3 {
                cols.push(c);
            }
        }
        let projection = (0..profile_dim).flat_map(|r| cols.iter().map(move |c| c[r])).collect();
        Ok(ProfileExtractor { signature_dims, profile_dim, projection })
    }

    fn project(&self, sig: &[f64]) -> Vec<f64> {
        (0..self.profile_dim)
            .map(|r| dot(&self.projection[r * self.signature_dims..(r + 1) * self.signature_dims], sig))
            .collect()
    }

    /// Unit profile of the frames `[start, end)`.
    pub fn extract(&self, frames: &Tensor<f64>, start: usize, end: usize) -> Result<Vec<f64>> {
        let end = end.min(frames.rows());
        if start >= end {
            return Err(Error::invalid("empty window"));
        }
        if frames.cols() < self.signature_dims {
            return Err(Error::Shape(format!("{} feature dims, need {}", frames.cols(), self.signature_dims)));
        }
        let mut mean = vec![0.0; self.signature_dims];
        for r in start..end {
            mean.iter_mut().zip(frames.row(r)).for_each(|(m, v)| *m += v);
        }
        let mut p = self.project(&mean);
        if !(normalize(&mut p) > 0.0) {
            return Err(Error::invalid("window has no speaker energy"));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventorySpeaker {
    pub id: String,
    pub signature: Vec<f64>,
    pub profile: Vec<f64>,
}

/// Speakers, per-token patterns, and the profile extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerInventory {
    pub speakers: Vec<InventorySpeaker>,
    /// Indexed by vocabulary id; empty for specials.
    pub token_patterns: Vec<Vec<f64>>,
    pub extractor: ProfileExtractor,
}

impl SpeakerInventory {
    pub fn generate(cfg: &SynthConfig, vocab: &Vocabulary) -> Result<Self> {
        cfg.validate()?;
        let extractor = ProfileExtractor::new(cfg.signature_dims, cfg.profile_dim, cfg.inventory_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.inventory_seed);
        rng.set_stream(1);
        let sigs = separated_units(cfg.inventory_size, cfg.signature_dims, cfg.signature_max_cosine, &mut rng, "speakers")?;
        let speakers = sigs
            .into_iter()
            .enumerate()
            .map(|(i, signature)| {
                let mut profile = extractor.project(&signature);
                normalize(&mut profile);
                InventorySpeaker { id: format!("spk{i:02}"), signature, profile }
            })
            .collect();
        let regular = vocab.regular_ids();
        let token_dims = cfg.feat_dim - cfg.signature_dims;
        let mut pats = separated_units(regular.len(), token_dims, cfg.token_max_cosine, &mut rng, "token patterns")?.into_iter();
        let token_patterns = (0..vocab.len())
            .map(|t| if vocab.is_special(t) { Vec::new() } else { pats.next().expect("one per token") })
            .collect();
        Ok(SpeakerInventory { speakers, token_patterns, extractor })
    }

    pub fn profile_of(&self, speaker: usize) -> &[f64] {
        &self.speakers[speaker].profile
    }
}

/// One rendered utterance; token spans are frame ranges `[start, end)`
/// relative to the utterance start.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: usize,
    pub tokens: Vec<usize>,
    pub frames: Tensor<f64>,
    pub spans: Vec<(usize, usize)>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Renders `tokens` for inventory speaker `speaker`: each token lasts a
/// uniform 3-10 frames (configurable) of signature + pattern + noise.
pub fn render_utterance(
    inv: &SpeakerInventory,
    cfg: &SynthConfig,
    speaker: usize,
    tokens: &[usize],
    rng: &mut impl Rng,
) -> Result<Utterance> {
    if tokens.is_empty() {
        return Err(Error::invalid("utterance needs at least one token"));
    }
    let sp = inv.speakers.get(speaker).ok_or_else(|| Error::Index(format!("speaker {speaker}")))?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut data = Vec::new();
    let mut spans = Vec::with_capacity(tokens.len());
    let mut at = 0;
    for &t in tokens {
        let pat = inv
            .token_patterns
            .get(t)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::invalid(format!("token {t} is not renderable")))?;
        let len = rng.random_range(cfg.min_token_frames..=cfg.max_token_frames);
        for _ in 0..len {
            for &v in sp.signature.iter().chain(pat) {
                data.push(v + noise.sample(rng));
            }
        }
        spans.push((at, at + len));
        at += len;
    }
    Ok(Utterance { speaker, tokens: tokens.to_vec(), frames: Tensor::matrix(at, cfg.feat_dim, data)?, spans })
}

/// Random onsets: consecutive utterances overlap with probability
/// `overlap_prob` (by 1 frame up to `max_overlap_ratio` of the shorter one),
/// otherwise follow after a uniform `[0, max_gap_sec]` pause. Returns start
/// frames and the total length including edge silences.
pub fn plan_offsets(lengths: &[usize], cfg: &SynthConfig, rng: &mut impl Rng) -> (Vec<usize>, usize) {
    let edge = cfg.secs_to_frames(cfg.edge_silence_sec);
    let mut offsets: Vec<usize> = Vec::with_capacity(lengths.len());
    let mut at = rng.random_range(0..=edge);
    let mut end = at;
    for (i, &len) in lengths.iter().enumerate() {
        if i > 0 {
            let prev_start = offsets[i - 1];
            let prev_end = prev_start + lengths[i - 1];
            if rng.random_bool(cfg.overlap_prob) {
                let limit = ((cfg.max_overlap_ratio * lengths[i - 1].min(len) as f64).floor() as usize).max(1);
                let ov: usize = rng.random_range(1..=limit).min(lengths[i - 1] - 1).max(1);
                at = (prev_end - ov).max(prev_start + 1);
            } else {
                at = prev_end + rng.random_range(0..=cfg.secs_to_frames(cfg.max_gap_sec));
            }
        }
        offsets.push(at);
        end = end.max(at + len);
    }
    (offsets, end + rng.random_range(0..=edge))
}

/// Sums utterances placed at `offsets` into `total` frames. Contributions
/// are added in (offset, speaker) order so the result does not depend on
/// the input order.
pub fn overlay(placed: &[(&Utterance, usize)], total: usize, dim: usize) -> Result<Tensor<f64>> {
    let mut order: Vec<&(&Utterance, usize)> = placed.iter().collect();
    order.sort_by_key(|(u, o)| (*o, u.speaker));
    let mut out = Tensor::zeros(&[total, dim]);
    for (u, off) in order {
        if u.frames.cols() != dim || off + u.len() > total {
            return Err(Error::Shape(format!("utterance at {off} with {} frames exceeds {total}", u.len())));
        }
        for r in 0..u.len() {
            out.row_mut(off + r).iter_mut().zip(u.frames.row(r)).for_each(|(a, b)| *a += b);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAlignment {
    pub token: String,
    pub start: f64,
    pub end: f64,
}

/// Placement and words of one utterance inside a mixture, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub speaker: String,
    pub offset: f64,
    pub duration: f64,
    pub words: Vec<WordAlignment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub features: AcousticFeatures,
    /// Sorted by offset.
    pub utterances: Vec<UtteranceMeta>,
}

/// Places the utterances with [`plan_offsets`] and overlays them.
pub fn mix_utterances(
    utterances: &[Utterance],
    inv: &SpeakerInventory,
    vocab: &Vocabulary,
    cfg: &SynthConfig,
    rng: &mut impl Rng,
) -> Result<Mixture> {
    if utterances.is_empty() || utterances.len() > MAX_SPEAKERS {
        return Err(Error::invalid(format!("{} utterances, expected 1 to {MAX_SPEAKERS}", utterances.len())));
    }
    let lengths: Vec<usize> = utterances.iter().map(Utterance::len).collect();
    let (offsets, total) = plan_offsets(&lengths, cfg, rng);
    let placed: Vec<(&Utterance, usize)> = utterances.iter().zip(offsets).collect();
    mixture_from_placement(&placed, total, inv, vocab, cfg)
}

/// Builds a mixture from explicit placements.
pub fn mixture_from_placement(
    placed: &[(&Utterance, usize)],
    total: usize,
    inv: &SpeakerInventory,
    vocab: &Vocabulary,
    cfg: &SynthConfig,
) -> Result<Mixture> {
    let frames = overlay(placed, total, cfg.feat_dim)?;
    let fp = cfg.frame_period;
    let mut order: Vec<&(&Utterance, usize)> = placed.iter().collect();
    order.sort_by_key(|(u, o)| (*o, u.speaker));
    let utterances = order
        .iter()
        .map(|(u, off)| UtteranceMeta {
            speaker: inv.speakers[u.speaker].id.clone(),
            offset: *off as f64 * fp,
            duration: u.len() as f64 * fp,
            words: u
                .tokens
                .iter()
                .zip(&u.spans)
                .map(|(&t, &(s, e))| WordAlignment {
                    token: vocab.token(t).unwrap_or_default().to_string(),
                    start: (off + s) as f64 * fp,
                    end: (off + e) as f64 * fp,
                })
                .collect(),
        })
        .collect();
    Ok(Mixture { features: AcousticFeatures::new(frames, fp)?, utterances })
}

/// Serialized reference for a mixture, speakers indexed into `profiles`.
pub fn reference_for(mixture: &Mixture, profiles: &ProfileSet, vocab: &Vocabulary) -> Result<SerializedReference> {
    let lh = ModelConfig::encoder_frames(mixture.features.num_frames());
    let fp = mixture.features.frame_period;
    let parts = mixture
        .utterances
        .iter()
        .map(|u| {
            let speaker = profiles
                .index_of(&u.speaker)
                .ok_or_else(|| Error::invalid(format!("speaker {} missing from profiles", u.speaker)))?;
            let mut tokens = Vec::with_capacity(u.words.len());
            let mut timings = Vec::with_capacity(u.words.len());
            for w in &u.words {
                tokens.push(vocab.id(&w.token).ok_or_else(|| Error::invalid(format!("unknown token {}", w.token)))?);
                timings.push(map_reference_frames(w.start, w.end, fp, SUBSAMPLE_FACTOR, lh)?);
            }
            Ok(SotPart { speaker, tokens, timings: Some(timings) })
        })
        .collect::<Result<Vec<_>>>()?;
    serialize_sot(&parts, vocab)
}

/// A training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub id: String,
    pub features: AcousticFeatures,
    pub reference: SerializedReference,
    pub profiles: ProfileSet,
    pub utterances: Vec<UtteranceMeta>,
}

impl MixtureSample {
    /// One reference segment per utterance.
    pub fn reference_segments(&self) -> Vec<DiarSegment> {
        self.utterances
            .iter()
            .map(|u| DiarSegment { speaker: u.speaker.clone(), start: u.offset, end: u.offset + u.duration })
            .collect()
    }

    /// Reference words grouped by speaker in time order.
    pub fn reference_transcript(&self) -> Transcript {
        let mut t = Transcript::new();
        for u in &self.utterances {
            t.entry(u.speaker.clone()).or_default().extend(u.words.iter().map(|w| TranscriptWord {
                token: w.token.clone(),
                start: w.start,
                end: w.end,
            }));
        }
        t
    }
}

fn sample_tokens(vocab: &Vocabulary, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let regular = vocab.regular_ids();
    let mut out: Vec<usize> = Vec::with_capacity(n);
    while out.len() < n {
        let t = regular[rng.random_range(0..regular.len())];
        if out.last() != Some(&t) || regular.len() == 1 {
            out.push(t);
        }
    }
    out
}

/// Deterministic generator for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// One mixture of distinct speakers with a shuffled profile set holding
/// the true speakers plus distractors.
pub fn make_sample(
    id: String,
    inv: &SpeakerInventory,
    vocab: &Vocabulary,
    cfg: &SynthConfig,
    rng: &mut impl Rng,
) -> Result<MixtureSample> {
    let n = rng.random_range(cfg.min_speakers..=cfg.max_speakers);
    let distractors = rng.random_range(0..=cfg.max_distractors);
    let chosen = sample(rng, inv.speakers.len(), n + distractors).into_vec();
    let utterances = chosen[..n]
        .iter()
        .map(|&s| {
            let k = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
            let toks = sample_tokens(vocab, k, rng);
            render_utterance(inv, cfg, s, &toks, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mixture = mix_utterances(&utterances, inv, vocab, cfg, rng)?;
    let rounded = mixture.features.frames().map(|v| v as f32 as f64);
    mixture.features = AcousticFeatures::new(rounded, cfg.frame_period)?;

    let mut members = chosen.clone();
    for i in (1..members.len()).rev() {
        members.swap(i, rng.random_range(0..=i));
    }
    let noise = Normal::new(0.0, cfg.profile_noise).map_err(|e| Error::invalid(e.to_string()))?;
    let profiles = ProfileSet::new(
        members
            .iter()
            .map(|&s| {
                let mut v: Vec<f64> = inv.profile_of(s).iter().map(|x| x + noise.sample(rng)).collect();
                normalize(&mut v);
                SpeakerProfile { id: inv.speakers[s].id.clone(), vector: v }
            })
            .collect(),
    )?;
    let reference = reference_for(&mixture, &profiles, vocab)?;
    Ok(MixtureSample { id, features: mixture.features, reference, profiles, utterances: mixture.utterances })
}

/// `n` samples, sample `i` drawn from [`sample_rng`]`(seed, i)`.
pub fn build_training_set(
    n: usize,
    inv: &SpeakerInventory,
    vocab: &Vocabulary,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Vec<MixtureSample>> {
    if n == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    cfg.validate()?;
    (0..n).into_par_iter().map(|i| make_sample(format!("mix{i:06}"), inv, vocab, cfg, &mut sample_rng(seed, i))).collect()
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub features: String,
    pub num_frames: usize,
    pub frame_period: f64,
    pub profiles: ProfileSet,
    pub tokens: Vec<String>,
    pub speakers: Vec<usize>,
    pub timings: Vec<Option<[usize; 2]>>,
    pub utterances: Vec<UtteranceMeta>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const FEATURE_DIR: &str = "features";

fn manifest_entry(s: &MixtureSample, vocab: &Vocabulary) -> ManifestEntry {
    ManifestEntry {
        id: s.id.clone(),
        features: format!("{FEATURE_DIR}/{}.f32", s.id),
        num_frames: s.features.num_frames(),
        frame_period: s.features.frame_period,
        profiles: s.profiles.clone(),
        tokens: s.reference.tokens.iter().map(|&t| vocab.token(t).unwrap_or_default().to_string()).collect(),
        speakers: s.reference.speakers.clone(),
        timings: s.reference.timings.iter().map(|t| t.map(|f| [f.start, f.end])).collect(),
        utterances: s.utterances.clone(),
    }
}

pub fn manifest_text(samples: &[MixtureSample], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(&manifest_entry(s, vocab))?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes features, manifest and vocabulary under `dir`.
pub fn write_dataset(dir: &Path, samples: &[MixtureSample], vocab: &Vocabulary) -> Result<()> {
    std::fs::create_dir_all(dir.join(FEATURE_DIR))?;
    for s in samples {
        write_features(&dir.join(FEATURE_DIR).join(format!("{}.f32", s.id)), s.features.frames())?;
    }
    write_atomic(&dir.join(VOCAB_FILE), vocab.to_file_string().as_bytes())?;
    write_atomic(&dir.join(MANIFEST_FILE), manifest_text(samples, vocab)?.as_bytes())
}

/// Reads a dataset written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(Vocabulary, Vec<MixtureSample>)> {
    let vocab_path = dir.join(VOCAB_FILE);
    let vocab = Vocabulary::parse(&std::fs::read_to_string(&vocab_path)?)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path)?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: manifest_path.display().to_string(), line: i + 1, msg };
        let e: ManifestEntry = serde_json::from_str(line).map_err(|err| parse_err(err.to_string()))?;
        let tokens = e
            .tokens
            .iter()
            .map(|t| vocab.id(t).ok_or_else(|| parse_err(format!("unknown token {t}"))))
            .collect::<Result<Vec<_>>>()?;
        let timings = e.timings.iter().map(|t| t.map(|[s, e]| crate::model::FrameSpan { start: s, end: e })).collect();
        let reference = SerializedReference { tokens, speakers: e.speakers, timings };
        let frames = read_features(&dir.join(&e.features))?;
        if frames.rows() != e.num_frames {
            return Err(parse_err(format!("{} frames on disk, manifest says {}", frames.rows(), e.num_frames)));
        }
        let features = AcousticFeatures::new(frames, e.frame_period)?;
        reference
            .validate(&vocab, Some(e.profiles.len()), Some(ModelConfig::encoder_frames(features.num_frames())))
            .map_err(|err| parse_err(err.to_string()))?;
        samples.push(MixtureSample { id: e.id, features, reference, profiles: e.profiles, utterances: e.utterances });
    }
    Ok((vocab, samples))
}
