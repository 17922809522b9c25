//! Long-form diarization: energy VAD, sliding-window embeddings, spectral
//! clustering with eigengap speaker counting, centroid profiles, chunked
//! joint decoding and token-to-segment conversion.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::infer_token_times;
use crate::error::{Error, Result};
use crate::model::{AcousticFeatures, ProfileSet, SaAsr, SpeakerProfile, SUBSAMPLE_FACTOR};
use crate::numeric::Real;
use crate::synth::ProfileExtractor;

/// Speech interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechRegion {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiarSegment {
    pub speaker: String,
    pub start: f64,
    pub end: f64,
}

/// A recognized token with absolute times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedToken {
    pub speaker: String,
    pub token: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptWord {
    pub token: String,
    pub start: f64,
    pub end: f64,
}

/// Per-speaker word lists.
pub type Transcript = BTreeMap<String, Vec<TranscriptWord>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerCount {
    Estimate,
    Oracle(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub window_sec: f64,
    pub hop_sec: f64,
    pub max_chunk_sec: f64,
    /// Same-speaker tokens closer than this are merged into one segment.
    pub merge_gap: f64,
    /// Tokens lasting this long or more are dropped.
    pub max_token_dur: f64,
    pub energy_threshold: f64,
    pub min_sil_sec: f64,
    pub max_speakers: usize,
    pub speaker_count: SpeakerCount,
    pub max_decode_len: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_sec: 1.5,
            hop_sec: 0.75,
            max_chunk_sec: 20.0,
            merge_gap: 2.0,
            max_token_dur: 2.0,
            energy_threshold: 0.5,
            min_sil_sec: 0.3,
            max_speakers: 8,
            speaker_count: SpeakerCount::Estimate,
            max_decode_len: 256,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("window_sec", self.window_sec),
            ("hop_sec", self.hop_sec),
            ("max_chunk_sec", self.max_chunk_sec),
            ("merge_gap", self.merge_gap),
            ("max_token_dur", self.max_token_dur),
            ("min_sil_sec", self.min_sil_sec),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("pipeline.{name} must be positive")));
            }
        }
        if self.hop_sec > self.window_sec {
            return Err(Error::invalid("pipeline.hop_sec must not exceed window_sec"));
        }
        if !(self.energy_threshold >= 0.0) {
            return Err(Error::invalid("pipeline.energy_threshold must be nonnegative"));
        }
        if self.max_speakers == 0 || self.max_decode_len == 0 {
            return Err(Error::invalid("pipeline.max_speakers and max_decode_len must be positive"));
        }
        if self.speaker_count == SpeakerCount::Oracle(0) {
            return Err(Error::invalid("oracle speaker count must be positive"));
        }
        Ok(())
    }
}

/// Frames whose feature norm exceeds `threshold`, grouped into regions;
/// silences shorter than `min_sil_sec` are bridged.
pub fn detect_speech(features: &AcousticFeatures, threshold: f64, min_sil_sec: f64) -> Vec<SpeechRegion> {
    let fp = features.frame_period;
    let x = features.frames();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut open: Option<usize> = None;
    for i in 0..=x.rows() {
        let speech = i < x.rows() && x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt() > threshold;
        match (speech, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                open = None;
            }
            _ => {}
        }
    }
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(last) if ((r.0 - last.1) as f64) * fp < min_sil_sec - 1e-9 => last.1 = r.1,
            _ => merged.push(r),
        }
    }
    merged.into_iter().map(|(s, e)| SpeechRegion { start: s as f64 * fp, end: e as f64 * fp }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEmbedding {
    pub start: f64,
    pub end: f64,
    pub vector: Vec<f64>,
}

impl WindowEmbedding {
    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

fn frames_of(sec: f64, fp: f64) -> usize {
    (sec / fp + 1e-9).round() as usize
}

/// Window spans `[start, end)` in frames tiling one region: full windows
/// every `hop`, then a final partial window if the uncovered remainder is
/// at least half a window.
pub fn tile_windows(start: usize, end: usize, window: usize, hop: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut at = start;
    let mut covered = start;
    while at + window <= end {
        out.push((at, at + window));
        covered = at + window;
        at += hop;
    }
    if 2 * (end - covered) >= window && end > covered {
        out.push((end.saturating_sub(window).max(start), end));
    }
    out
}

/// Unit embeddings of windows tiled over the speech regions. Windows
/// without speaker energy are skipped.
pub fn window_embeddings(
    features: &AcousticFeatures,
    regions: &[SpeechRegion],
    window_sec: f64,
    hop_sec: f64,
    extractor: &ProfileExtractor,
) -> Result<Vec<WindowEmbedding>> {
    let fp = features.frame_period;
    let (w, h) = (frames_of(window_sec, fp).max(1), frames_of(hop_sec, fp).max(1));
    let mut out = Vec::new();
    for r in regions {
        let (s, e) = (frames_of(r.start, fp), frames_of(r.end, fp).min(features.num_frames()));
        for (a, b) in tile_windows(s, e, w, h) {
            if let Ok(vector) = extractor.extract(features.frames(), a, b) {
                out.push(WindowEmbedding { start: a as f64 * fp, end: b as f64 * fp, vector });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub num_speakers: usize,
    /// Neighbour count chosen for the binarized affinity.
    pub p: usize,
}

fn cosine_affinity(emb: &[Vec<f64>]) -> DMatrix<f64> {
    let n = emb.len();
    let unit: Vec<Vec<f64>> = emb
        .iter()
        .map(|e| {
            let nn = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            e.iter().map(|x| if nn > 0.0 { x / nn } else { 0.0 }).collect()
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum() })
}

/// Keeps each row's `p` largest off-diagonal entries (ties at the cut all
/// kept) as ones, then symmetrizes as `(A + A^T) / 2`.
fn binarize(aff: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let n = aff.nrows();
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut vals: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| aff[(i, j)]).collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        let Some(&cut) = vals.get(p.min(vals.len()).saturating_sub(1)) else { continue };
        for j in 0..n {
            if j != i && aff[(i, j)] >= cut {
                b[(i, j)] = 1.0;
            }
        }
    }
    (&b + b.transpose()) * 0.5
}

/// Ascending eigenvalues and matching eigenvectors (as columns) of the
/// unnormalized Laplacian `D - A`.
fn laplacian_spectrum(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut l = -a.clone();
    for i in 0..n {
        l[(i, i)] = a.row(i).sum();
    }
    let eig = SymmetricEigen::new(l);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]).then(x.cmp(&y)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Largest gap among the first `max_k` eigenvalues: `(k, gap / lambda_max)`.
fn eigengap(vals: &[f64], max_k: usize) -> (usize, f64) {
    let lmax = vals.last().copied().unwrap_or(0.0).max(1e-10);
    let mut best = (1, f64::NEG_INFINITY);
    for i in 0..max_k.min(vals.len().saturating_sub(1)) {
        let g = vals[i + 1] - vals[i];
        if g > best.1 + 1e-12 {
            best = (i + 1, g);
        }
    }
    (best.0, best.1.max(0.0) / lmax)
}

/// Normalized maximum eigengap spectral clustering. Each neighbour count
/// `p` in `1..=max(1, n/4)` yields a count estimate (index of the largest
/// eigengap) and `g_p`, that gap over the top eigenvalue. The speaker count
/// is the majority estimate (smaller on ties) unless given, and `p`
/// minimizes `p / g_p` among candidates agreeing with it.
pub fn nme_spectral_cluster(embeddings: &[Vec<f64>], count: SpeakerCount, max_speakers: usize) -> Result<Clustering> {
    let n = embeddings.len();
    if n == 0 {
        return Err(Error::invalid("no embeddings to cluster"));
    }
    if let SpeakerCount::Oracle(k) = count {
        if k == 0 || k > n {
            return Err(Error::invalid(format!("oracle count {k} with {n} embeddings")));
        }
    }
    if n == 1 {
        return Ok(Clustering { labels: vec![0], num_speakers: 1, p: 0 });
    }
    let aff = cosine_affinity(embeddings);
    let max_k = max_speakers.min(n);
    let cands: Vec<(usize, usize, f64, DMatrix<f64>)> = (1..=(n / 4).max(1))
        .map(|p| {
            let (vals, vecs) = laplacian_spectrum(&binarize(&aff, p));
            let (k, g) = eigengap(&vals, max_k);
            (p, k, g, vecs)
        })
        .collect();
    let target = match count {
        SpeakerCount::Oracle(k) if cands.iter().any(|c| c.1 == k) => k,
        SpeakerCount::Oracle(_) => 0,
        SpeakerCount::Estimate => {
            let mut votes = vec![0usize; max_k + 1];
            for c in &cands {
                votes[c.1] += 1;
            }
            (1..=max_k).rev().max_by_key(|&k| votes[k]).expect("max_k >= 1")
        }
    };
    let mut best: Option<(f64, usize, usize, DMatrix<f64>)> = None;
    for (p, k, g, vecs) in cands {
        if target != 0 && k != target {
            continue;
        }
        let ratio = if g > 0.0 { p as f64 / g } else { f64::INFINITY };
        if best.as_ref().is_none_or(|b| ratio < b.0) {
            best = Some((ratio, p, k, vecs));
        }
    }
    let (_, p, k_est, vecs) = best.expect("at least one candidate");
    let k = match count {
        SpeakerCount::Oracle(k) => k,
        SpeakerCount::Estimate => k_est,
    };
    if k == 1 {
        return Ok(Clustering { labels: vec![0; n], num_speakers: 1, p });
    }
    let points: Vec<Vec<f64>> = (0..n).map(|i| (0..k).map(|c| vecs[(i, c)]).collect()).collect();
    let labels = refine_cosine(embeddings, kmeans(&points, k, 10), k);
    let num_speakers = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Clustering { labels, num_speakers, p })
}

/// Reassigns each embedding to the cluster with the most similar mean
/// direction until stable; keeps the previous labels if a cluster would
/// empty. Labels are renumbered by first appearance.
fn refine_cosine(embeddings: &[Vec<f64>], mut labels: Vec<usize>, k: usize) -> Vec<usize> {
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }).collect::<Vec<f64>>()
    };
    let emb: Vec<Vec<f64>> = embeddings.iter().map(|e| unit(e)).collect();
    let dim = emb[0].len();
    for _ in 0..20 {
        let mut means = vec![vec![0.0; dim]; k];
        for (e, &l) in emb.iter().zip(&labels) {
            means[l].iter_mut().zip(e).for_each(|(m, x)| *m += x);
        }
        let means: Vec<Vec<f64>> = means.iter().map(|m| unit(m)).collect();
        let next: Vec<usize> = emb
            .iter()
            .map(|e| {
                (0..k)
                    .max_by(|&a, &b| {
                        let (sa, sb): (f64, f64) =
                            (means[a].iter().zip(e).map(|(x, y)| x * y).sum(), means[b].iter().zip(e).map(|(x, y)| x * y).sum());
                        sa.total_cmp(&sb).then(b.cmp(&a))
                    })
                    .expect("k > 0")
            })
            .collect();
        if next == labels || (0..k).any(|c| !next.contains(&c)) {
            break;
        }
        labels = next;
    }
    renumber(labels, k)
}

fn renumber(labels: Vec<usize>, k: usize) -> Vec<usize> {
    let mut map: Vec<Option<usize>> = vec![None; k];
    let mut next = 0;
    labels
        .into_iter()
        .map(|l| {
            *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ with `restarts` fixed seeds, keeping the lowest inertia.
/// Labels are renumbered by first appearance.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: u64) -> Vec<usize> {
    let n = points.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for seed in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
        while centers.len() < k {
            let d: Vec<f64> =
                points.iter().map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min)).collect();
            let total: f64 = d.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, &di) in d.iter().enumerate() {
                    if u < di {
                        pick = i;
                        break;
                    }
                    u -= di;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            centers.push(points[next].clone());
        }
        let mut labels = vec![0; n];
        for _ in 0..100 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let l = (0..k).min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b]))).expect("k > 0");
                if l != labels[i] {
                    labels[i] = l;
                    changed = true;
                }
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
                if !members.is_empty() {
                    for (d, v) in center.iter_mut().enumerate() {
                        *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
        if best.as_ref().is_none_or(|b| inertia < b.0 - 1e-12) {
            best = Some((inertia, labels));
        }
    }
    renumber(best.expect("one restart").1, k)
}

/// Unit-normalized cluster means with ids `spk0`, `spk1`, ...
pub fn cluster_centroids(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<ProfileSet> {
    if embeddings.len() != labels.len() || embeddings.is_empty() {
        return Err(Error::Shape(format!("{} embeddings for {} labels", embeddings.len(), labels.len())));
    }
    let k = labels.iter().max().expect("nonempty") + 1;
    let dim = embeddings[0].len();
    let mut profiles = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<&Vec<f64>> = embeddings.iter().zip(labels).filter(|(_, &l)| l == c).map(|(e, _)| e).collect();
        if members.is_empty() {
            return Err(Error::invalid(format!("cluster {c} is empty")));
        }
        let mut mean: Vec<f64> = (0..dim).map(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64).collect();
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 1e-12) {
            return Err(Error::invalid(format!("cluster {c} has a zero-norm mean")));
        }
        mean.iter_mut().for_each(|x| *x /= norm);
        profiles.push(SpeakerProfile { id: format!("spk{c}"), vector: mean });
    }
    ProfileSet::new(profiles)
}

/// Chunk boundaries at the midpoints of the silences between regions;
/// chunks longer than `max_chunk_sec` are split into equal parts.
pub fn chunk_audio(regions: &[SpeechRegion], max_chunk_sec: f64) -> Vec<(f64, f64)> {
    let Some(first) = regions.first() else { return Vec::new() };
    let mut bounds = vec![first.start];
    for w in regions.windows(2) {
        bounds.push(0.5 * (w[0].end + w[1].start));
    }
    bounds.push(regions.last().expect("nonempty").end);
    let mut out = Vec::new();
    for w in bounds.windows(2) {
        let (s, e) = (w[0], w[1]);
        let parts = ((e - s) / max_chunk_sec - 1e-9).ceil().max(1.0) as usize;
        let step = (e - s) / parts as f64;
        for i in 0..parts {
            out.push((s + step * i as f64, if i + 1 == parts { e } else { s + step * (i + 1) as f64 }));
        }
    }
    out
}

/// Drops tokens lasting `max_dur` or more or ending before they start, then
/// merges each speaker's tokens closer than `merge_gap` into one segment.
/// Segments of zero length are omitted. Output is sorted by start time,
/// then speaker.
pub fn tokens_to_segments(tokens: &[TimedToken], merge_gap: f64, max_dur: f64) -> Vec<DiarSegment> {
    let mut by_speaker: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for t in tokens {
        if t.end < t.start || t.end - t.start >= max_dur {
            continue;
        }
        by_speaker.entry(&t.speaker).or_default().push((t.start, t.end));
    }
    let mut out = Vec::new();
    for (spk, mut spans) in by_speaker {
        spans.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut cur: Option<(f64, f64)> = None;
        for (s, e) in spans {
            cur = match cur {
                Some((cs, ce)) if s - ce < merge_gap => Some((cs, ce.max(e))),
                Some(seg) => {
                    out.push((spk, seg));
                    Some((s, e))
                }
                None => Some((s, e)),
            };
        }
        if let Some(seg) = cur {
            out.push((spk, seg));
        }
    }
    let mut segs: Vec<DiarSegment> = out
        .into_iter()
        .filter(|(_, (s, e))| e > s)
        .map(|(spk, (start, end))| DiarSegment { speaker: spk.to_string(), start, end })
        .collect();
    segs.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.speaker.cmp(&b.speaker)));
    segs
}

/// Everything the pipeline produced for one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diarization {
    pub regions: Vec<SpeechRegion>,
    pub chunks: Vec<(f64, f64)>,
    pub num_speakers: usize,
    pub tokens: Vec<TimedToken>,
    pub segments: Vec<DiarSegment>,
    pub transcript: Transcript,
}

impl Diarization {
    fn empty() -> Self {
        Diarization {
            regions: Vec::new(),
            chunks: Vec::new(),
            num_speakers: 0,
            tokens: Vec::new(),
            segments: Vec::new(),
            transcript: Transcript::new(),
        }
    }
}

/// Speaker profiles for a recording: window embeddings (whole regions when
/// no window fits) clustered and averaged.
pub fn estimate_profiles(
    features: &AcousticFeatures,
    regions: &[SpeechRegion],
    cfg: &PipelineConfig,
    extractor: &ProfileExtractor,
) -> Result<Option<ProfileSet>> {
    let mut windows = window_embeddings(features, regions, cfg.window_sec, cfg.hop_sec, extractor)?;
    if windows.is_empty() {
        let fp = features.frame_period;
        windows = regions
            .iter()
            .filter_map(|r| {
                let vector = extractor.extract(features.frames(), frames_of(r.start, fp), frames_of(r.end, fp)).ok()?;
                Some(WindowEmbedding { start: r.start, end: r.end, vector })
            })
            .collect();
    }
    if windows.is_empty() {
        return Ok(None);
    }
    let emb: Vec<Vec<f64>> = windows.into_iter().map(|w| w.vector).collect();
    let count = match cfg.speaker_count {
        SpeakerCount::Oracle(k) => SpeakerCount::Oracle(k.min(emb.len())),
        c => c,
    };
    let c = nme_spectral_cluster(&emb, count, cfg.max_speakers)?;
    Ok(Some(cluster_centroids(&emb, &c.labels)?))
}

/// Tokens recognized in one chunk, times offset by the chunk start and
/// clamped to the chunk.
pub fn decode_chunk<T: Real>(
    features: &AcousticFeatures,
    chunk: (f64, f64),
    profiles: &ProfileSet,
    model: &SaAsr<T>,
    max_len: usize,
) -> Result<Vec<TimedToken>> {
    let fp = features.frame_period;
    let (a, b) = (frames_of(chunk.0, fp), frames_of(chunk.1, fp).min(features.num_frames()));
    if a >= b {
        return Ok(Vec::new());
    }
    let x = features.slice(a, b)?;
    let offset = a as f64 * fp;
    let end = b as f64 * fp;
    let decoded = model.greedy_decode(&x, profiles, max_len)?;
    let h = decoded.hypothesis;
    let vocab = model.vocab();
    let mut out = Vec::new();
    for ((&t, &s), p) in h.tokens.iter().zip(&h.speakers).zip(&h.posteriors) {
        let Some(p) = p else { continue };
        let (ts, te) = infer_token_times(p, fp, SUBSAMPLE_FACTOR);
        out.push(TimedToken {
            speaker: profiles.get(s).id.clone(),
            token: vocab.token(t).unwrap_or_default().to_string(),
            start: (offset + ts).clamp(offset, end),
            end: (offset + te).clamp(offset, end),
        });
    }
    Ok(out)
}

/// Full pipeline on one recording. Chunks are decoded in parallel on the
/// current rayon pool; results keep chunk order.
pub fn diarize_recording<T: Real>(
    features: &AcousticFeatures,
    cfg: &PipelineConfig,
    model: &SaAsr<T>,
    extractor: &ProfileExtractor,
) -> Result<Diarization> {
    cfg.validate()?;
    let regions = detect_speech(features, cfg.energy_threshold, cfg.min_sil_sec);
    if regions.is_empty() {
        return Ok(Diarization::empty());
    }
    let Some(profiles) = estimate_profiles(features, &regions, cfg, extractor)? else {
        return Ok(Diarization { regions, ..Diarization::empty() });
    };
    let chunks = chunk_audio(&regions, cfg.max_chunk_sec);
    let per_chunk: Vec<Vec<TimedToken>> =
        chunks.par_iter().map(|&c| decode_chunk(features, c, &profiles, model, cfg.max_decode_len)).collect::<Result<_>>()?;
    let tokens: Vec<TimedToken> = per_chunk.into_iter().flatten().collect();
    let segments = tokens_to_segments(&tokens, cfg.merge_gap, cfg.max_token_dur);
    let mut transcript = Transcript::new();
    for t in &tokens {
        transcript.entry(t.speaker.clone()).or_default().push(TranscriptWord {
            token: t.token.clone(),
            start: t.start,
            end: t.end,
        });
    }
    Ok(Diarization { regions, chunks, num_speakers: profiles.len(), tokens, segments, transcript })
}
