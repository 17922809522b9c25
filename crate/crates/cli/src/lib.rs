//! File-level `synth`, `train`, `diarize` and `score` workflows.

pub mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use t2d_core::formats::{emit_rttm, group_by_recording, parse_rttm, sig6};
use t2d_core::io::{read_features, write_atomic};
use t2d_core::model::{AcousticFeatures, SaAsr};
use t2d_core::numeric::Checkpoint;
use t2d_core::pipeline::{diarize_recording, DiarSegment, SpeakerCount, Transcript, TranscriptWord};
use t2d_core::scoring::{cpwer, der, der_table, pool_der, DerReport};
use t2d_core::synth::{build_training_set, load_dataset, write_dataset, MixtureSample, SpeakerInventory, MANIFEST_FILE};
use t2d_core::train::{train, Stage, StepLog};

pub use config::{DataConfig, Paths, RunConfig, CONFIG_ENV};

pub const TRAIN_SPLIT: &str = "train";
pub const TEST_SPLIT: &str = "test";
pub const REF_RTTM: &str = "ref.rttm";
pub const REF_TRANSCRIPT: &str = "ref_transcript.json";
pub const HYP_RTTM: &str = "hyp.rttm";
pub const HYP_TRANSCRIPT: &str = "hyp_transcript.json";
pub const STAGE1_CHECKPOINT: &str = "stage1.json";
pub const MODEL_CHECKPOINT: &str = "model.json";
pub const LOSS_LOG: &str = "loss.jsonl";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration.
    Usage(String),
    /// Missing, malformed or incompatible input files.
    Data(String),
    /// A computed result broke an invariant.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<t2d_core::Error> for CliError {
    fn from(e: t2d_core::Error) -> Self {
        use t2d_core::Error as E;
        match e {
            E::Shape(_) | E::NonFinite(_) | E::Index(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn with_path(p: &Path) -> impl Fn(t2d_core::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", p.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(with_path(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn rounded_transcript(t: &Transcript) -> Transcript {
    t.iter()
        .map(|(k, words)| {
            let w =
                words.iter().map(|w| TranscriptWord { token: w.token.clone(), start: sig6(w.start), end: sig6(w.end) }).collect();
            (k.clone(), w)
        })
        .collect()
}

fn rounded_segments(s: &[DiarSegment]) -> Vec<DiarSegment> {
    s.iter().map(|d| DiarSegment { speaker: d.speaker.clone(), start: sig6(d.start), end: sig6(d.end) }).collect()
}

/// Per-recording transcripts as stored on disk.
pub type TranscriptFile = BTreeMap<String, Transcript>;

fn write_split(dir: &Path, samples: &[MixtureSample], vocab: &t2d_core::model::Vocabulary) -> CliResult<()> {
    write_dataset(dir, samples, vocab).map_err(with_path(dir))?;
    let rttm: String = samples.iter().map(|s| emit_rttm(&s.id, &rounded_segments(&s.reference_segments()))).collect();
    write_atomic(&dir.join(REF_RTTM), rttm.as_bytes()).map_err(with_path(dir))?;
    let transcripts: TranscriptFile =
        samples.iter().map(|s| (s.id.clone(), rounded_transcript(&s.reference_transcript()))).collect();
    write_json(&dir.join(REF_TRANSCRIPT), &transcripts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub train_mixtures: usize,
    pub test_mixtures: usize,
}

/// Writes `train/` and `test/` dataset splits with reference RTTM and
/// transcripts under `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> CliResult<SynthSummary> {
    cfg.validate()?;
    let vocab = t2d_core::model::Vocabulary::toy();
    let inv = SpeakerInventory::generate(&cfg.synth, &vocab)?;
    let d = &cfg.data;
    let train_set = build_training_set(d.train_mixtures, &inv, &vocab, &cfg.synth, d.seed)?;
    let test_set = build_training_set(d.test_mixtures, &inv, &vocab, &cfg.synth, d.seed.wrapping_add(1))?;
    write_split(&out.join(TRAIN_SPLIT), &train_set, &vocab)?;
    write_split(&out.join(TEST_SPLIT), &test_set, &vocab)?;
    log::info!("wrote {} training and {} test mixtures to {}", train_set.len(), test_set.len(), out.display());
    Ok(SynthSummary { train_mixtures: train_set.len(), test_mixtures: test_set.len() })
}

/// A dataset directory, or its training split when given the synth root.
fn split_dir(dir: &Path, split: &str) -> PathBuf {
    if dir.join(MANIFEST_FILE).exists() {
        dir.to_path_buf()
    } else {
        dir.join(split)
    }
}

pub fn load_split(dir: &Path, split: &str) -> CliResult<(t2d_core::model::Vocabulary, Vec<MixtureSample>)> {
    let d = split_dir(dir, split);
    if !d.join(MANIFEST_FILE).exists() {
        return Err(CliError::Data(format!("no dataset manifest under {}", dir.display())));
    }
    load_dataset(&d).map_err(with_path(&d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_loss: f64,
}

/// Two-stage training in 32-bit precision. Writes the per-step loss log,
/// a checkpoint after each stage and returns the last step's loss.
pub fn cmd_train(cfg: &RunConfig, data: &Path, model_dir: &Path) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let (vocab, samples) = load_split(data, TRAIN_SPLIT)?;
    if let Some(s) = samples.iter().find(|s| s.features.dim() != cfg.model.feat_dim || s.profiles.dim() != cfg.model.profile_dim)
    {
        return Err(CliError::Data(format!("sample {} does not match the model dimensions", s.id)));
    }
    std::fs::create_dir_all(model_dir).map_err(|e| CliError::Data(format!("{}: {e}", model_dir.display())))?;
    let mut model: SaAsr<f32> = SaAsr::new(cfg.model.clone(), vocab)?;
    let mut log_text = String::new();
    let mut last: Option<StepLog> = None;
    train(
        &mut model,
        &samples,
        &cfg.train,
        |l| {
            if (l.step + 1) % 100 == 0 {
                log::info!("{:?} step {} loss {:.4}", l.stage, l.step + 1, l.loss());
            }
            log_text.push_str(&serde_json::to_string(l).expect("step log serializes"));
            log_text.push('\n');
            last = Some(l.clone());
        },
        |stage, m| {
            let name = match stage {
                Stage::Recognition => STAGE1_CHECKPOINT,
                Stage::Timing => MODEL_CHECKPOINT,
            };
            m.to_checkpoint().save(&model_dir.join(name))
        },
    )?;
    write_atomic(&model_dir.join(LOSS_LOG), log_text.as_bytes()).map_err(with_path(model_dir))?;
    Ok(TrainSummary { steps: cfg.train.stage1_steps + cfg.train.stage2_steps, final_loss: last.map_or(f64::NAN, |l| l.loss()) })
}

/// Loads a checkpoint into a model laid out by the configuration; a
/// mismatch reports every differing tensor.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> CliResult<SaAsr<f32>> {
    let ck = Checkpoint::load(checkpoint).map_err(with_path(checkpoint))?;
    let described: SaAsr<f64> = SaAsr::from_checkpoint(&ck).map_err(with_path(checkpoint))?;
    let mut model: SaAsr<f64> = SaAsr::new(cfg.model.clone(), described.vocab().clone())?;
    model.load_params(&ck).map_err(with_path(checkpoint))?;
    Ok(model.cast())
}

/// Speaker-count mode for `diarize`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleSpeakers {
    /// Use the configured mode.
    Config,
    Fixed(usize),
    /// The number of reference speakers of each dataset recording.
    Reference,
}

struct Recording {
    id: String,
    features: AcousticFeatures,
    speakers: Option<usize>,
}

fn recordings(cfg: &RunConfig, input: &Path) -> CliResult<Vec<Recording>> {
    if input.is_dir() {
        let (_, samples) = load_split(input, TEST_SPLIT)?;
        return Ok(samples
            .into_iter()
            .map(|s| {
                let n = s.utterances.iter().map(|u| &u.speaker).collect::<std::collections::BTreeSet<_>>().len();
                Recording { id: s.id, features: s.features, speakers: Some(n) }
            })
            .collect());
    }
    let frames = read_features(input).map_err(with_path(input))?;
    let features = AcousticFeatures::new(frames, cfg.synth.frame_period)?;
    let id = input.file_stem().map_or_else(|| "recording".into(), |s| s.to_string_lossy().into_owned());
    Ok(vec![Recording { id, features, speakers: None }])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiarizeSummary {
    pub recordings: usize,
    pub segments: usize,
}

/// Runs the pipeline on a dataset directory (every recording) or on one
/// feature file, writing `hyp.rttm` and `hyp_transcript.json` into `out`.
pub fn cmd_diarize(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    oracle: OracleSpeakers,
) -> CliResult<DiarizeSummary> {
    cfg.validate()?;
    let model = load_model(cfg, checkpoint)?;
    let extractor = SpeakerInventory::generate(&cfg.synth, model.vocab())?.extractor;
    let recs = recordings(cfg, input)?;
    let mut rttm = String::new();
    let mut transcripts = TranscriptFile::new();
    let mut segments = 0;
    for r in &recs {
        let mut pc = cfg.pipeline.clone();
        match (oracle, r.speakers) {
            (OracleSpeakers::Config, _) => {}
            (OracleSpeakers::Fixed(k), _) => pc.speaker_count = SpeakerCount::Oracle(k),
            (OracleSpeakers::Reference, Some(k)) => pc.speaker_count = SpeakerCount::Oracle(k),
            (OracleSpeakers::Reference, None) => {
                return Err(CliError::Usage("reference speaker counts need a dataset input".into()));
            }
        }
        let d = diarize_recording(&r.features, &pc, &model, &extractor).map_err(|e| CliError::from(e).context(&r.id))?;
        segments += d.segments.len();
        rttm.push_str(&emit_rttm(&r.id, &d.segments));
        transcripts.insert(r.id.clone(), rounded_transcript(&d.transcript));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    write_atomic(&out.join(HYP_RTTM), rttm.as_bytes()).map_err(with_path(out))?;
    write_json(&out.join(HYP_TRANSCRIPT), &transcripts)?;
    Ok(DiarizeSummary { recordings: recs.len(), segments })
}

impl CliError {
    fn context(self, what: &str) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Internal(m) => CliError::Internal(format!("{what}: {m}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerSummary {
    pub der: f64,
    pub ser: f64,
    pub miss: f64,
    pub fa: f64,
    pub ref_speech_sec: f64,
}

impl From<&DerReport> for DerSummary {
    fn from(r: &DerReport) -> Self {
        DerSummary {
            der: sig6(r.der),
            ser: sig6(r.ser),
            miss: sig6(r.miss),
            fa: sig6(r.fa),
            ref_speech_sec: sig6(r.total_ref_speech_sec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpwerSummary {
    pub cpwer: f64,
    pub errors: usize,
    pub ref_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingScore {
    pub id: String,
    pub der: DerSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cpwer: Option<CpwerSummary>,
}

/// Percentages, rounded to six significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub overall: DerSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall_cpwer: Option<CpwerSummary>,
    pub recordings: Vec<RecordingScore>,
}

fn words(t: &Transcript) -> BTreeMap<String, Vec<String>> {
    t.iter().map(|(k, w)| (k.clone(), w.iter().map(|w| w.token.clone()).collect())).collect()
}

/// Scores hypothesis RTTM (and optionally transcripts) against references.
/// Recordings absent from the hypothesis count as fully missed.
pub fn cmd_score(
    ref_rttm: &Path,
    hyp_rttm: &Path,
    transcripts: Option<(&Path, &Path)>,
    out: Option<&Path>,
) -> CliResult<(ScoreReport, String)> {
    let read = |p: &Path| -> CliResult<BTreeMap<String, Vec<DiarSegment>>> {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        Ok(group_by_recording(parse_rttm(&text, &p.display().to_string())?))
    };
    let refs = read(ref_rttm)?;
    let hyps = read(hyp_rttm)?;
    let tr = match transcripts {
        Some((r, h)) => Some((read_json::<TranscriptFile>(r)?, read_json::<TranscriptFile>(h)?)),
        None => None,
    };
    let mut ids: Vec<&String> = refs.keys().chain(hyps.keys()).collect();
    ids.sort();
    ids.dedup();
    let empty = Vec::new();
    let mut rows = Vec::new();
    let mut recordings = Vec::new();
    let (mut errors, mut ref_words) = (0usize, 0usize);
    for id in ids {
        let r = der(refs.get(id).unwrap_or(&empty), hyps.get(id).unwrap_or(&empty), 0.0)
            .map_err(|e| CliError::from(e).context(id))?;
        if (r.der - (r.ser + r.miss + r.fa)).abs() > 1e-9 * r.der.abs().max(1.0) {
            return Err(CliError::Internal(format!("{id}: DER {} is not SER + Miss + FA", r.der)));
        }
        let cp = match &tr {
            Some((rt, ht)) => {
                let rw = rt.get(id).map(words).unwrap_or_default();
                let hw = ht.get(id).map(words).unwrap_or_default();
                if rw.is_empty() {
                    None
                } else {
                    let c = cpwer(&rw, &hw).map_err(|e| CliError::from(e).context(id))?;
                    errors += c.counts.errors();
                    ref_words += c.counts.ref_words;
                    Some(CpwerSummary { cpwer: sig6(c.cpwer), errors: c.counts.errors(), ref_words: c.counts.ref_words })
                }
            }
            None => None,
        };
        recordings.push(RecordingScore { id: id.clone(), der: DerSummary::from(&r), cpwer: cp });
        rows.push((id.clone(), r));
    }
    let pooled = pool_der(&rows.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>());
    rows.push(("OVERALL".into(), pooled.clone()));
    let overall_cpwer =
        tr.as_ref().map(|_| CpwerSummary { cpwer: sig6(100.0 * errors as f64 / ref_words.max(1) as f64), errors, ref_words });
    let report = ScoreReport { overall: DerSummary::from(&pooled), overall_cpwer, recordings };
    if let Some(p) = out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        }
        write_json(p, &report)?;
    }
    Ok((report, der_table(&rows)))
}
