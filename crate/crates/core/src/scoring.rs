//! Diarization error rate on a 10 ms grid and (cp)WER.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::DiarSegment;

pub const GRID_SEC: f64 = 0.01;

/// Error breakdown in grid units plus percentages of reference speech.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerReport {
    pub ser: f64,
    pub miss: f64,
    pub fa: f64,
    pub der: f64,
    pub total_ref_speech_sec: f64,
    pub ref_units: u64,
    pub confusion_units: u64,
    pub miss_units: u64,
    pub fa_units: u64,
    /// Reference speaker to hypothesis speaker.
    pub mapping: BTreeMap<String, String>,
}

fn to_grid(t: f64) -> i64 {
    (t / GRID_SEC).round() as i64
}

struct Grid {
    speakers: Vec<String>,
    /// Per speaker, active cells as a bitmap over `[0, len)`.
    active: Vec<Vec<bool>>,
}

fn rasterize(segs: &[DiarSegment], len: usize) -> Grid {
    let mut speakers: Vec<String> = segs.iter().map(|s| s.speaker.clone()).collect();
    speakers.sort();
    speakers.dedup();
    let mut active = vec![vec![false; len]; speakers.len()];
    for s in segs {
        let k = speakers.binary_search(&s.speaker).expect("speaker listed");
        let (a, b) = (to_grid(s.start).max(0) as usize, to_grid(s.end).max(0) as usize);
        for cell in active[k].iter_mut().take(b.min(len)).skip(a) {
            *cell = true;
        }
    }
    Grid { speakers, active }
}

/// Cells excluded from scoring: within `collar` of any reference boundary.
fn collar_mask(reference: &[DiarSegment], len: usize, collar_sec: f64) -> Vec<bool> {
    let mut mask = vec![false; len];
    let c = to_grid(collar_sec);
    if c <= 0 {
        return mask;
    }
    for s in reference {
        for b in [to_grid(s.start), to_grid(s.end)] {
            for i in (b - c).max(0)..(b + c).min(len as i64) {
                mask[i as usize] = true;
            }
        }
    }
    mask
}

fn check(segs: &[DiarSegment]) -> Result<()> {
    for s in segs {
        if !(s.start >= 0.0) || !(s.end >= 0.0) || !s.start.is_finite() || !s.end.is_finite() {
            return Err(Error::invalid(format!(
                "segment {} [{}, {}] has negative or non-finite time",
                s.speaker, s.start, s.end
            )));
        }
    }
    Ok(())
}

/// Overlap in grid cells between every reference and hypothesis speaker.
fn overlap_matrix(r: &Grid, h: &Grid, mask: &[bool]) -> Vec<Vec<f64>> {
    r.active
        .iter()
        .map(|ra| {
            h.active
                .iter()
                .map(|ha| ra.iter().zip(ha).zip(mask).filter(|((a, b), m)| **a && **b && !**m).count() as f64)
                .collect()
        })
        .collect()
}

/// NIST-style DER: per cell, with `Nr` reference and `Nh` hypothesis
/// speakers and `C` correctly mapped ones, miss = max(0, Nr-Nh),
/// false alarm = max(0, Nh-Nr), confusion = min(Nr, Nh) - C.
pub fn der(reference: &[DiarSegment], hypothesis: &[DiarSegment], collar_sec: f64) -> Result<DerReport> {
    check(reference)?;
    check(hypothesis)?;
    if !(collar_sec >= 0.0) {
        return Err(Error::invalid("collar must be nonnegative"));
    }
    let len = reference.iter().chain(hypothesis).map(|s| to_grid(s.end).max(0) as usize).max().unwrap_or(0);
    let r = rasterize(reference, len);
    let h = rasterize(hypothesis, len);
    let mask = collar_mask(reference, len, collar_sec);
    let m = overlap_matrix(&r, &h, &mask);
    let assign = map_speakers_optimal(&m);
    let mut mapping = BTreeMap::new();
    for (i, a) in assign.iter().enumerate() {
        if let Some(j) = a.filter(|&j| m[i][j] > 0.0) {
            mapping.insert(r.speakers[i].clone(), h.speakers[j].clone());
        }
    }
    let (mut total, mut conf, mut miss, mut fa) = (0u64, 0u64, 0u64, 0u64);
    for t in 0..len {
        if mask[t] {
            continue;
        }
        let nr = r.active.iter().filter(|a| a[t]).count() as u64;
        let nh = h.active.iter().filter(|a| a[t]).count() as u64;
        let correct =
            assign.iter().enumerate().filter(|(i, a)| matches!(a, Some(j) if r.active[*i][t] && h.active[*j][t])).count() as u64;
        total += nr;
        miss += nr.saturating_sub(nh);
        fa += nh.saturating_sub(nr);
        conf += nr.min(nh) - correct;
    }
    let pct = |x: u64| {
        if total == 0 {
            if x == 0 {
                0.0
            } else {
                100.0
            }
        } else {
            100.0 * x as f64 / total as f64
        }
    };
    let (ser, miss_p, fa_p) = (pct(conf), pct(miss), pct(fa));
    Ok(DerReport {
        ser,
        miss: miss_p,
        fa: fa_p,
        der: pct(conf + miss + fa),
        total_ref_speech_sec: total as f64 * GRID_SEC,
        ref_units: total,
        confusion_units: conf,
        miss_units: miss,
        fa_units: fa,
        mapping,
    })
}

/// One-to-one assignment of rows to columns maximizing the summed weight;
/// `result[row]` is the matched column, if any. Hungarian algorithm on the
/// negated, zero-padded square matrix.
pub fn map_speakers_optimal(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return vec![None; rows];
    }
    let cost = |i: usize, j: usize| if i < rows && j < cols { -weights[i][j] } else { 0.0 };
    // Potentials-based O(n^3) formulation, 1-indexed.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Errors over `max(1, ref_words)`, in percent.
    pub fn rate(&self) -> f64 {
        100.0 * self.errors() as f64 / self.ref_words.max(1) as f64
    }

    fn add(&mut self, o: &EditCounts) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.ref_words += o.ref_words;
    }
}

/// Unit-cost Levenshtein alignment; among equal totals the backtrace
/// prefers substitutions, then deletions, then insertions.
pub fn wer<S: PartialEq>(reference: &[S], hypothesis: &[S]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut c = EditCounts { ref_words: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]) {
            if reference[i - 1] != hypothesis[j - 1] {
                c.substitutions += 1;
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpwerReport {
    pub cpwer: f64,
    pub counts: EditCounts,
    /// Reference speaker to hypothesis speaker; padding shows as `None`.
    pub pairs: Vec<(Option<String>, Option<String>)>,
    /// Total errors per permutation, in lexicographic order (brute-force
    /// search only).
    pub permutation_errors: Vec<usize>,
}

pub const CPWER_BRUTE_FORCE_LIMIT: usize = 8;

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Concatenated minimum-permutation WER. Both sides are padded with empty
/// speakers to equal size; permutations are searched exhaustively up to
/// eight speakers (first minimum in lexicographic order wins), otherwise
/// paired by assignment over the pairwise error matrix.
pub fn cpwer(reference: &BTreeMap<String, Vec<String>>, hypothesis: &BTreeMap<String, Vec<String>>) -> Result<CpwerReport> {
    if reference.is_empty() {
        return Err(Error::invalid("cpWER needs at least one reference speaker"));
    }
    let refs: Vec<(&String, &Vec<String>)> = reference.iter().collect();
    let hyps: Vec<(&String, &Vec<String>)> = hypothesis.iter().collect();
    let n = refs.len().max(hyps.len());
    let empty: Vec<String> = Vec::new();
    let r_words = |i: usize| refs.get(i).map_or(&empty, |x| x.1);
    let h_words = |j: usize| hyps.get(j).map_or(&empty, |x| x.1);
    let pair: Vec<Vec<EditCounts>> = (0..n).map(|i| (0..n).map(|j| wer(r_words(i), h_words(j))).collect()).collect();
    let (perm, permutation_errors) = if n <= CPWER_BRUTE_FORCE_LIMIT {
        let mut p: Vec<usize> = (0..n).collect();
        let mut best: Option<(usize, Vec<usize>)> = None;
        let mut all = Vec::new();
        loop {
            let e: usize = p.iter().enumerate().map(|(i, &j)| pair[i][j].errors()).sum();
            all.push(e);
            if best.as_ref().is_none_or(|(b, _)| e < *b) {
                best = Some((e, p.clone()));
            }
            if !next_permutation(&mut p) {
                break;
            }
        }
        (best.expect("at least one permutation").1, all)
    } else {
        let w: Vec<Vec<f64>> = pair.iter().map(|row| row.iter().map(|c| -(c.errors() as f64)).collect()).collect();
        (map_speakers_optimal(&w).into_iter().map(|j| j.expect("square matrix")).collect(), Vec::new())
    };
    let mut counts = EditCounts::default();
    let mut pairs = Vec::with_capacity(n);
    for (i, &j) in perm.iter().enumerate() {
        counts.add(&pair[i][j]);
        pairs.push((refs.get(i).map(|x| x.0.clone()), hyps.get(j).map(|x| x.0.clone())));
    }
    Ok(CpwerReport { cpwer: counts.rate(), counts, pairs, permutation_errors })
}

/// Fixed-width table with SER, Miss, FA and DER columns.
pub fn der_table(rows: &[(String, DerReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>8} {:>8} {:>8} {:>8}", "recording", "SER", "Miss", "FA", "DER");
    for (name, r) in rows {
        let _ = writeln!(out, "{:<24} {:>8.2} {:>8.2} {:>8.2} {:>8.2}", name, r.ser, r.miss, r.fa, r.der);
    }
    out
}

/// Pools several recordings' grid counts into one report.
pub fn pool_der(reports: &[DerReport]) -> DerReport {
    let sum = |f: fn(&DerReport) -> u64| reports.iter().map(f).sum::<u64>();
    let (total, conf, miss, fa) = (sum(|r| r.ref_units), sum(|r| r.confusion_units), sum(|r| r.miss_units), sum(|r| r.fa_units));
    let pct = |x: u64| {
        if total == 0 {
            if x == 0 {
                0.0
            } else {
                100.0
            }
        } else {
            100.0 * x as f64 / total as f64
        }
    };
    DerReport {
        ser: pct(conf),
        miss: pct(miss),
        fa: pct(fa),
        der: pct(conf + miss + fa),
        total_ref_speech_sec: total as f64 * GRID_SEC,
        ref_units: total,
        confusion_units: conf,
        miss_units: miss,
        fa_units: fa,
        mapping: BTreeMap::new(),
    }
}
