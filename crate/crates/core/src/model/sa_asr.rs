//! Joint speaker-attributed recognizer: an ASR encoder-decoder and a
//! speaker encoder-decoder that exchange information through cosine
//! attention over speaker profiles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::features::AcousticFeatures;
use super::profiles::ProfileSet;
use super::sot::SerializedReference;
use super::vocab::Vocabulary;
use crate::alignment::{time_ce_loss, TimeHeads, TimeLogits};
use crate::error::{Error, Result};
use crate::numeric::nn::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::numeric::{positional_encoding, Checkpoint, Graph, NodeId, ParamId, ParamStore, Real, Tensor};

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct AsrDecoderLayer {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_src: LayerNorm,
    src_attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct SpeakerDecoderLayer {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_spk: LayerNorm,
    spk_attn: MultiHeadAttention,
    ln_asr: LayerNorm,
    asr_attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct Architecture {
    subsample: [Linear; 2],
    asr_encoder: Vec<EncoderLayer>,
    asr_encoder_ln: LayerNorm,
    spk_encoder: Vec<EncoderLayer>,
    spk_encoder_ln: LayerNorm,
    asr_embed: ParamId,
    asr_decoder: Vec<AsrDecoderLayer>,
    asr_decoder_ln: LayerNorm,
    profile_proj: ParamId,
    output: Linear,
    spk_embed: ParamId,
    spk_decoder: Vec<SpeakerDecoderLayer>,
    spk_decoder_ln: LayerNorm,
    spk_out: Linear,
    time: TimeHeads,
}

/// Encoder outputs, both `l^h x f^h`.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub asr: NodeId,
    pub spk: NodeId,
}

/// Cosine scores `N x K`, their softmax, and the weighted profiles `N x f^d`.
#[derive(Debug, Clone, Copy)]
pub struct ProfileAttention {
    pub cosine: NodeId,
    pub weights: NodeId,
    pub weighted_profile: NodeId,
}

#[derive(Debug, Clone)]
pub struct AsrDecoded {
    /// `N x |V|` pre-softmax token scores.
    pub logits: NodeId,
    /// Per-layer residual state after self-attention, the time-head queries.
    pub time_queries: Vec<NodeId>,
}

/// Everything one teacher-forced pass produces.
#[derive(Debug, Clone)]
pub struct Forward {
    pub encoded: Encoded,
    pub speaker_queries: NodeId,
    pub profiles: ProfileAttention,
    pub decoded: AsrDecoded,
    pub time: TimeLogits,
}

/// Loss nodes of one example.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub token: NodeId,
    pub speaker: NodeId,
    pub time: NodeId,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub vocabulary: Vec<(String, bool)>,
}

/// The joint model and its parameters.
#[derive(Debug, Clone)]
pub struct SaAsr<T> {
    config: ModelConfig,
    vocab: Vocabulary,
    arch: Architecture,
    pub params: ParamStore<T>,
}

fn encoder_layer<T: Real>(s: &mut ParamStore<T>, name: &str, c: &ModelConfig, rng: &mut ChaCha8Rng) -> EncoderLayer {
    EncoderLayer {
        ln_attn: LayerNorm::new(s, &format!("{name}.ln_attn"), c.hidden),
        attn: MultiHeadAttention::new(s, &format!("{name}.attn"), c.hidden, c.heads, rng),
        ln_ff: LayerNorm::new(s, &format!("{name}.ln_ff"), c.hidden),
        ff: FeedForward::new(s, &format!("{name}.ff"), c.hidden, c.ff_dim, rng),
    }
}

impl<T: Real> SaAsr<T> {
    /// Fresh model with seeded uniform initialization.
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.init_seed);
        let mut s = ParamStore::<T>::new();
        let subsample = [
            Linear::new(&mut s, "front.sub0", 2 * c.feat_dim, c.hidden, true, &mut rng),
            Linear::new(&mut s, "front.sub1", 2 * c.hidden, c.hidden, true, &mut rng),
        ];
        let asr_encoder = (0..c.encoder_layers).map(|l| encoder_layer(&mut s, &format!("asr_enc.l{l}"), c, &mut rng)).collect();
        let asr_encoder_ln = LayerNorm::new(&mut s, "asr_enc.ln", c.hidden);
        let spk_encoder =
            (0..c.speaker_encoder_layers).map(|l| encoder_layer(&mut s, &format!("spk_enc.l{l}"), c, &mut rng)).collect();
        let spk_encoder_ln = LayerNorm::new(&mut s, "spk_enc.ln", c.hidden);
        let asr_embed = s.insert_uniform_bound("asr_dec.embed", &[vocab.len(), c.hidden], 1.0, &mut rng);
        let asr_decoder = (0..c.asr_decoder_layers)
            .map(|l| {
                let n = format!("asr_dec.l{l}");
                AsrDecoderLayer {
                    ln_self: LayerNorm::new(&mut s, &format!("{n}.ln_self"), c.hidden),
                    self_attn: MultiHeadAttention::new(&mut s, &format!("{n}.self"), c.hidden, c.heads, &mut rng),
                    ln_src: LayerNorm::new(&mut s, &format!("{n}.ln_src"), c.hidden),
                    src_attn: MultiHeadAttention::new(&mut s, &format!("{n}.src"), c.hidden, c.heads, &mut rng),
                    ln_ff: LayerNorm::new(&mut s, &format!("{n}.ln_ff"), c.hidden),
                    ff: FeedForward::new(&mut s, &format!("{n}.ff"), c.hidden, c.ff_dim, &mut rng),
                }
            })
            .collect();
        let asr_decoder_ln = LayerNorm::new(&mut s, "asr_dec.ln", c.hidden);
        let profile_proj = s.insert_uniform("asr_dec.w_spk", &[c.profile_dim, c.hidden], c.profile_dim, &mut rng);
        let output = Linear::new(&mut s, "asr_dec.out", c.hidden, vocab.len(), true, &mut rng);
        let spk_embed = s.insert_uniform_bound("spk_dec.embed", &[vocab.len(), c.hidden], 1.0, &mut rng);
        let spk_decoder = (0..c.speaker_decoder_layers)
            .map(|l| {
                let n = format!("spk_dec.l{l}");
                SpeakerDecoderLayer {
                    ln_self: LayerNorm::new(&mut s, &format!("{n}.ln_self"), c.hidden),
                    self_attn: MultiHeadAttention::new(&mut s, &format!("{n}.self"), c.hidden, c.heads, &mut rng),
                    ln_spk: LayerNorm::new(&mut s, &format!("{n}.ln_spk"), c.hidden),
                    spk_attn: MultiHeadAttention::new(&mut s, &format!("{n}.src_spk"), c.hidden, c.heads, &mut rng),
                    ln_asr: LayerNorm::new(&mut s, &format!("{n}.ln_asr"), c.hidden),
                    asr_attn: MultiHeadAttention::new(&mut s, &format!("{n}.src_asr"), c.hidden, c.heads, &mut rng),
                    ln_ff: LayerNorm::new(&mut s, &format!("{n}.ln_ff"), c.hidden),
                    ff: FeedForward::new(&mut s, &format!("{n}.ff"), c.hidden, c.ff_dim, &mut rng),
                }
            })
            .collect();
        let spk_decoder_ln = LayerNorm::new(&mut s, "spk_dec.ln", c.hidden);
        let spk_out = Linear::new(&mut s, "spk_dec.out", c.hidden, c.profile_dim, true, &mut rng);
        let time = TimeHeads::new(&mut s, c.hidden, c.subspace_dim, c.asr_decoder_layers, &mut rng);
        let arch = Architecture {
            subsample,
            asr_encoder,
            asr_encoder_ln,
            spk_encoder,
            spk_encoder_ln,
            asr_embed,
            asr_decoder,
            asr_decoder_ln,
            profile_proj,
            output,
            spk_embed,
            spk_decoder,
            spk_decoder_ln,
            spk_out,
            time,
        };
        Ok(SaAsr { config, vocab, arch, params: s })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn time_heads(&self) -> &TimeHeads {
        &self.arch.time
    }

    pub fn output_layer(&self) -> &Linear {
        &self.arch.output
    }

    pub fn profile_projection(&self) -> ParamId {
        self.arch.profile_proj
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> SaAsr<U> {
        SaAsr { config: self.config.clone(), vocab: self.vocab.clone(), arch: self.arch.clone(), params: self.params.cast() }
    }

    pub fn meta(&self) -> ModelMeta {
        let vocabulary = (0..self.vocab.len())
            .map(|i| (self.vocab.token(i).unwrap_or_default().to_string(), self.vocab.is_special(i)))
            .collect();
        ModelMeta { config: self.config.clone(), vocabulary }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.params.to_checkpoint(serde_json::to_value(self.meta()).expect("meta serializes"))
    }

    /// Rebuilds the model described by a checkpoint and loads its values.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: ModelMeta =
            serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Checkpoint(format!("model metadata: {e}")))?;
        let text: String =
            meta.vocabulary.iter().map(|(t, s)| if *s { format!("{t}\tspecial\n") } else { format!("{t}\n") }).collect();
        let vocab = Vocabulary::parse(&text)?;
        let mut model = SaAsr::new(meta.config, vocab)?;
        model.params.load_checkpoint(ck)?;
        Ok(model)
    }

    /// Loads checkpoint values into this model's existing layout.
    pub fn load_params(&mut self, ck: &Checkpoint) -> Result<()> {
        self.params.load_checkpoint(ck)
    }

    fn encoder_stack(&self, g: &mut Graph<T>, layers: &[EncoderLayer], final_ln: &LayerNorm, x: NodeId) -> Result<NodeId> {
        let s = &self.params;
        let mut h = x;
        for layer in layers {
            let n = layer.ln_attn.forward(g, s, h)?;
            let a = layer.attn.forward(g, s, n, n, false)?;
            h = g.add(h, a)?;
            let n = layer.ln_ff.forward(g, s, h)?;
            let f = layer.ff.forward(g, s, n)?;
            h = g.add(h, f)?;
        }
        final_ln.forward(g, s, h)
    }

    /// Shared stride-2 front end followed by the ASR and speaker encoders.
    pub fn encode(&self, g: &mut Graph<T>, features: &Tensor<T>) -> Result<Encoded> {
        if features.shape().len() != 2 || features.rows() == 0 {
            return Err(Error::invalid("encoder input needs at least one frame"));
        }
        if features.cols() != self.config.feat_dim {
            return Err(Error::Shape(format!("feature dim {} vs model {}", features.cols(), self.config.feat_dim)));
        }
        let s = &self.params;
        let mut h = g.constant(features.clone());
        for sub in &self.arch.subsample {
            let stacked = g.stack2(h);
            let lin = sub.forward(g, s, stacked)?;
            h = g.gelu(lin);
        }
        let len = g.value(h).rows();
        let pe = g.constant(positional_encoding(len, self.config.hidden));
        let h = g.add(h, pe)?;
        let asr = self.encoder_stack(g, &self.arch.asr_encoder, &self.arch.asr_encoder_ln, h)?;
        let spk = self.encoder_stack(g, &self.arch.spk_encoder, &self.arch.spk_encoder_ln, h)?;
        Ok(Encoded { asr, spk })
    }

    fn embed_prefix(&self, g: &mut Graph<T>, table: ParamId, prefix: &[usize]) -> Result<NodeId> {
        if prefix.is_empty() {
            return Err(Error::invalid("decoder prefix is empty"));
        }
        let t = g.param(&self.params, table);
        let e = g.embed(t, prefix)?;
        let pe = g.constant(positional_encoding(prefix.len(), self.config.hidden));
        g.add(e, pe)
    }

    /// Speaker queries `N x f^d`, one per prefix position.
    pub fn speaker_queries(&self, g: &mut Graph<T>, prefix: &[usize], enc: &Encoded) -> Result<NodeId> {
        let s = &self.params;
        let mut u = self.embed_prefix(g, self.arch.spk_embed, prefix)?;
        for layer in &self.arch.spk_decoder {
            let n = layer.ln_self.forward(g, s, u)?;
            let a = layer.self_attn.forward(g, s, n, n, true)?;
            u = g.add(u, a)?;
            let n = layer.ln_spk.forward(g, s, u)?;
            let a = layer.spk_attn.forward(g, s, n, enc.spk, false)?;
            u = g.add(u, a)?;
            let n = layer.ln_asr.forward(g, s, u)?;
            let a = layer.asr_attn.forward(g, s, n, enc.asr, false)?;
            u = g.add(u, a)?;
            let n = layer.ln_ff.forward(g, s, u)?;
            let f = layer.ff.forward(g, s, n)?;
            u = g.add(u, f)?;
        }
        let u = self.arch.spk_decoder_ln.forward(g, s, u)?;
        self.arch.spk_out.forward(g, s, u)
    }

    /// Softmax over cosine similarity to each profile and the resulting
    /// weighted profile average.
    pub fn profile_attention(&self, g: &mut Graph<T>, queries: NodeId, profiles: &ProfileSet) -> Result<ProfileAttention> {
        if profiles.dim() != self.config.profile_dim {
            return Err(Error::Shape(format!("profile dim {} vs model {}", profiles.dim(), self.config.profile_dim)));
        }
        let qn = g.row_normalize(queries);
        let unit = g.constant(profiles.unit_matrix());
        let raw = g.constant(profiles.matrix());
        let cosine = g.matmul_t(qn, unit, false, true)?;
        let weights = g.softmax(cosine)?;
        let weighted_profile = g.matmul(weights, raw)?;
        Ok(ProfileAttention { cosine, weights, weighted_profile })
    }

    /// Token scores for each prefix position; the weighted profile enters
    /// the first layer's feed-forward input through `W^spk`.
    pub fn asr_decode(&self, g: &mut Graph<T>, prefix: &[usize], h_asr: NodeId, weighted_profile: NodeId) -> Result<AsrDecoded> {
        let s = &self.params;
        if g.value(weighted_profile).cols() != self.config.profile_dim || g.value(weighted_profile).rows() != prefix.len() {
            return Err(Error::Shape(format!(
                "weighted profile {:?} for {} positions",
                g.value(weighted_profile).shape(),
                prefix.len()
            )));
        }
        let mut z = self.embed_prefix(g, self.arch.asr_embed, prefix)?;
        let mut time_queries = Vec::with_capacity(self.arch.asr_decoder.len());
        for (l, layer) in self.arch.asr_decoder.iter().enumerate() {
            let n = layer.ln_self.forward(g, s, z)?;
            let a = layer.self_attn.forward(g, s, n, n, true)?;
            let z_self = g.add(z, a)?;
            time_queries.push(z_self);
            let n = layer.ln_src.forward(g, s, z_self)?;
            let a = layer.src_attn.forward(g, s, n, h_asr, false)?;
            let z_src = g.add(z_self, a)?;
            let mut ff_in = layer.ln_ff.forward(g, s, z_src)?;
            if l == 0 {
                let w = g.param(s, self.arch.profile_proj);
                let inj = g.matmul(weighted_profile, w)?;
                ff_in = g.add(ff_in, inj)?;
            }
            let f = layer.ff.forward(g, s, ff_in)?;
            z = g.add(z_src, f)?;
        }
        let z = self.arch.asr_decoder_ln.forward(g, s, z)?;
        let logits = self.arch.output.forward(g, s, z)?;
        Ok(AsrDecoded { logits, time_queries })
    }

    /// Teacher-forced pass over `prefix` (start symbol plus previous tokens).
    pub fn forward(&self, g: &mut Graph<T>, features: &Tensor<T>, profiles: &ProfileSet, prefix: &[usize]) -> Result<Forward> {
        let encoded = self.encode(g, features)?;
        let speaker_queries = self.speaker_queries(g, prefix, &encoded)?;
        let pa = self.profile_attention(g, speaker_queries, profiles)?;
        let decoded = self.asr_decode(g, prefix, encoded.asr, pa.weighted_profile)?;
        let time = self.arch.time.logits(g, &self.params, &decoded.time_queries, encoded.asr)?;
        Ok(Forward { encoded, speaker_queries, profiles: pa, decoded, time })
    }

    /// Decoder input for a reference: the start symbol then all but the
    /// last target.
    pub fn teacher_prefix(&self, reference: &SerializedReference) -> Vec<usize> {
        let mut p = Vec::with_capacity(reference.tokens.len());
        p.push(self.vocab.eos());
        p.extend_from_slice(&reference.tokens[..reference.tokens.len().saturating_sub(1)]);
        p
    }

    /// Token, speaker and time cross-entropy terms of one example.
    pub fn losses(
        &self,
        g: &mut Graph<T>,
        features: &AcousticFeatures,
        profiles: &ProfileSet,
        reference: &SerializedReference,
    ) -> Result<LossNodes> {
        reference.validate(&self.vocab, Some(profiles.len()), None)?;
        let x: Tensor<T> = features.frames().cast();
        let prefix = self.teacher_prefix(reference);
        let f = self.forward(g, &x, profiles, &prefix)?;
        let targets: Vec<Option<usize>> = reference.tokens.iter().map(|&t| Some(t)).collect();
        let spk: Vec<Option<usize>> = reference.speakers.iter().map(|&s| Some(s)).collect();
        let token = g.cross_entropy(f.decoded.logits, &targets)?;
        let speaker = g.cross_entropy(f.profiles.cosine, &spk)?;
        let time = time_ce_loss(g, &f.time, &reference.timings)?;
        Ok(LossNodes { token, speaker, time })
    }

    /// `-log Pr(Y, S | X, D)` under teacher forcing.
    pub fn joint_nll_loss(
        &self,
        g: &mut Graph<T>,
        features: &AcousticFeatures,
        profiles: &ProfileSet,
        reference: &SerializedReference,
    ) -> Result<NodeId> {
        let l = self.losses(g, features, profiles, reference)?;
        g.add(l.token, l.speaker)
    }

    /// Joint NLL plus time cross entropy, equally weighted.
    pub fn combined_loss(
        &self,
        g: &mut Graph<T>,
        features: &AcousticFeatures,
        profiles: &ProfileSet,
        reference: &SerializedReference,
    ) -> Result<NodeId> {
        let l = self.losses(g, features, profiles, reference)?;
        let nll = g.add(l.token, l.speaker)?;
        g.add(nll, l.time)
    }

    /// Value-level encoder outputs `(H^asr, H^spk)`.
    pub fn encode_values(&self, features: &AcousticFeatures) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, &features.frames().cast())?;
        Ok((g.value(enc.asr).clone(), g.value(enc.spk).clone()))
    }

    /// Parameters not belonging to the time heads.
    pub fn non_time_params(&self) -> Vec<ParamId> {
        let time: std::collections::HashSet<ParamId> = self.arch.time.param_ids().into_iter().collect();
        self.params.ids().filter(|id| !time.contains(id)).collect()
    }
}
