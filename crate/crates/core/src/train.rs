//! Two-stage training: joint token/speaker likelihood first, then the
//! combined objective with the time heads, with a fresh optimizer and
//! learning-rate schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SaAsr;
use crate::numeric::{adam_step, argmax, warmup_lr, AdamConfig, AdamState, Gradients, Graph, ParamId, Real};
use crate::synth::MixtureSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage1_steps: u64,
    pub stage2_steps: u64,
    pub lr: f64,
    pub stage2_lr: f64,
    pub warmup_steps: u64,
    /// A step accumulates whole samples until this many input frames.
    pub batch_frames: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Stage 2 updates only the time-head projections.
    pub freeze_time_heads_only: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_steps: 3000,
            stage2_steps: 1000,
            lr: 1e-3,
            stage2_lr: 1e-3,
            warmup_steps: 500,
            batch_frames: 2000,
            clip_norm: 5.0,
            seed: 0,
            freeze_time_heads_only: true,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.lr) || !pos(self.stage2_lr) || !pos(self.clip_norm) {
            return Err(Error::invalid("learning rates and clip norm must be positive"));
        }
        if self.batch_frames == 0 {
            return Err(Error::invalid("batch_frames must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Recognition,
    Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub stage: Stage,
    pub step: u64,
    pub lr: f64,
    pub samples: usize,
    /// Per-token averages over the batch.
    pub token: f64,
    pub speaker: f64,
    pub time: f64,
    pub grad_norm: f64,
}

impl StepLog {
    pub fn loss(&self) -> f64 {
        match self.stage {
            Stage::Recognition => self.token + self.speaker,
            Stage::Timing => self.token + self.speaker + self.time,
        }
    }
}

/// Deterministic epoch-wise shuffled batches of sample indices.
struct Batcher {
    lengths: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
    budget: usize,
}

impl Batcher {
    fn new(data: &[MixtureSample], budget: usize, seed: u64) -> Self {
        let lengths = data.iter().map(|s| s.features.num_frames()).collect();
        Batcher { lengths, order: Vec::new(), pos: 0, rng: ChaCha8Rng::seed_from_u64(seed), budget }
    }

    fn next(&mut self) -> Vec<usize> {
        let mut batch = Vec::new();
        let mut frames = 0;
        while frames < self.budget {
            if self.pos == self.order.len() {
                self.order = (0..self.lengths.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let i = self.order[self.pos];
            self.pos += 1;
            batch.push(i);
            frames += self.lengths[i];
            if batch.len() == self.lengths.len() {
                break;
            }
        }
        batch
    }
}

struct SampleGrad<T> {
    grads: Gradients<T>,
    terms: [f64; 3],
    tokens: usize,
}

fn sample_gradient<T: Real>(model: &SaAsr<T>, s: &MixtureSample, stage: Stage) -> Result<SampleGrad<T>> {
    let mut g = Graph::new();
    let l = model.losses(&mut g, &s.features, &s.profiles, &s.reference)?;
    let nll = g.add(l.token, l.speaker)?;
    let loss = match stage {
        Stage::Recognition => nll,
        Stage::Timing => g.add(nll, l.time)?,
    };
    let grads = g.backward(loss, model.params.len())?;
    let v = |n| g.value(n).data()[0].f64();
    Ok(SampleGrad { grads, terms: [v(l.token), v(l.speaker), v(l.time)], tokens: s.reference.tokens.len() })
}

/// Runs `steps` optimizer steps of one stage. Per-sample gradients are
/// computed in parallel and summed in batch order, so results do not depend
/// on the thread count.
#[allow(clippy::too_many_arguments)]
fn run_stage<T: Real>(
    model: &mut SaAsr<T>,
    data: &[MixtureSample],
    cfg: &TrainConfig,
    stage: Stage,
    steps: u64,
    peak: f64,
    trainable: &dyn Fn(ParamId) -> bool,
    on_step: &mut dyn FnMut(&StepLog),
) -> Result<()> {
    let seed = match stage {
        Stage::Recognition => cfg.seed,
        Stage::Timing => cfg.seed.wrapping_add(1),
    };
    let mut batcher = Batcher::new(data, cfg.batch_frames, seed);
    let mut state = AdamState::new(model.params.len());
    for step in 0..steps {
        let batch = batcher.next();
        let per: Vec<SampleGrad<T>> = {
            let m = &*model;
            batch.par_iter().map(|&i| sample_gradient(m, &data[i], stage)).collect::<Result<_>>()?
        };
        let tokens: usize = per.iter().map(|p| p.tokens).sum();
        let mut iter = per.into_iter();
        let first = iter.next().expect("non-empty batch");
        let mut grads = first.grads;
        let mut terms = first.terms;
        for p in iter {
            grads.accumulate(&p.grads);
            terms.iter_mut().zip(p.terms).for_each(|(a, b)| *a += b);
        }
        grads.scale(T::of(1.0 / tokens as f64));
        let norm = grads.global_norm().f64();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient norm"));
        }
        if norm > cfg.clip_norm {
            grads.scale(T::of(cfg.clip_norm / norm));
        }
        let lr = warmup_lr(peak, step + 1, cfg.warmup_steps);
        adam_step(&mut model.params, &grads, &mut state, &cfg.adam, lr, trainable)?;
        let n = tokens as f64;
        on_step(&StepLog {
            stage,
            step,
            lr,
            samples: batch.len(),
            token: terms[0] / n,
            speaker: terms[1] / n,
            time: terms[2] / n,
            grad_norm: norm,
        });
    }
    Ok(())
}

/// Stage 1 then stage 2. `on_stage_end` sees the model after each stage.
pub fn train<T: Real>(
    model: &mut SaAsr<T>,
    data: &[MixtureSample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
    mut on_stage_end: impl FnMut(Stage, &SaAsr<T>) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let time: std::collections::HashSet<ParamId> = model.time_heads().param_ids().into_iter().collect();
    let recog = |id: ParamId| !time.contains(&id);
    run_stage(model, data, cfg, Stage::Recognition, cfg.stage1_steps, cfg.lr, &recog, &mut on_step)?;
    on_stage_end(Stage::Recognition, model)?;
    let timing: Box<dyn Fn(ParamId) -> bool> =
        if cfg.freeze_time_heads_only { Box::new(|id| time.contains(&id)) } else { Box::new(|_| true) };
    run_stage(model, data, cfg, Stage::Timing, cfg.stage2_steps, cfg.stage2_lr, &*timing, &mut on_step)?;
    on_stage_end(Stage::Timing, model)
}

/// Teacher-forced accuracies over a set of samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TeacherForcedReport {
    pub tokens: usize,
    pub correct_tokens: usize,
    pub words: usize,
    pub correct_speakers: usize,
    pub timed: usize,
    /// Start and end both within the frame tolerance.
    pub timed_within: usize,
}

impl TeacherForcedReport {
    pub fn token_accuracy(&self) -> f64 {
        ratio(self.correct_tokens, self.tokens)
    }

    pub fn speaker_accuracy(&self) -> f64 {
        ratio(self.correct_speakers, self.words)
    }

    pub fn timing_accuracy(&self) -> f64 {
        ratio(self.timed_within, self.timed)
    }

    fn merge(mut self, o: &TeacherForcedReport) -> Self {
        self.tokens += o.tokens;
        self.correct_tokens += o.correct_tokens;
        self.words += o.words;
        self.correct_speakers += o.correct_speakers;
        self.timed += o.timed;
        self.timed_within += o.timed_within;
        self
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Token accuracy over all reference tokens; speaker accuracy over regular
/// tokens; timing over tokens with reference spans, counting a hit when both
/// argmax frames are within `tolerance` encoder frames.
pub fn evaluate_teacher_forced<T: Real>(
    model: &SaAsr<T>,
    data: &[MixtureSample],
    tolerance: usize,
) -> Result<TeacherForcedReport> {
    let per: Vec<TeacherForcedReport> = data
        .par_iter()
        .map(|s| {
            let mut g = Graph::new();
            let prefix = model.teacher_prefix(&s.reference);
            let f = model.forward(&mut g, &s.features.frames().cast(), &s.profiles, &prefix)?;
            let (logits, beta) = (g.value(f.decoded.logits), g.value(f.profiles.weights));
            let (ts, te) = (g.value(f.time.start), g.value(f.time.end));
            let mut r = TeacherForcedReport::default();
            for (n, &tok) in s.reference.tokens.iter().enumerate() {
                r.tokens += 1;
                r.correct_tokens += usize::from(argmax(logits.row(n)) == tok);
                if model.vocab().is_special(tok) {
                    continue;
                }
                r.words += 1;
                r.correct_speakers += usize::from(argmax(beta.row(n)) == s.reference.speakers[n]);
                if let Some(span) = s.reference.timings[n] {
                    r.timed += 1;
                    let ok =
                        argmax(ts.row(n)).abs_diff(span.start) <= tolerance && argmax(te.row(n)).abs_diff(span.end) <= tolerance;
                    r.timed_within += usize::from(ok);
                }
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().fold(TeacherForcedReport::default(), |acc, r| acc.merge(r)))
}
