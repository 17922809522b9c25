//! Fixtures and independent oracles shared by the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use t2d_core::alignment::{time_ce_loss, TimeHeads};
use t2d_core::model::{
    serialize_sot, AcousticFeatures, FrameSpan, ModelConfig, ProfileSet, SaAsr, SerializedReference, SotPart, SpeakerProfile,
    Vocabulary,
};
use t2d_core::numeric::nn::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use t2d_core::numeric::{cosine, grad_check, grad_check_store, Graph, NodeId, ParamStore, Tensor};
use t2d_core::pipeline::{tokens_to_segments, DiarSegment, TimedToken};
use t2d_core::scoring::wer;
use t2d_core::Result;

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn seg(s: &str, a: f64, b: f64) -> DiarSegment {
    DiarSegment { speaker: s.into(), start: a, end: b }
}

/// Grid DER error units `(total, confusion, miss, fa)` by exhaustive search
/// over every speaker mapping on a 10 ms grid.
pub fn brute_der(r: &[DiarSegment], h: &[DiarSegment]) -> (u64, u64, u64, u64) {
    let names = |v: &[DiarSegment]| {
        let mut n: Vec<String> = v.iter().map(|s| s.speaker.clone()).collect();
        n.sort();
        n.dedup();
        n
    };
    let (rn, hn) = (names(r), names(h));
    let cell = |t: f64| (t * 100.0).round() as usize;
    let len = r.iter().chain(h).map(|s| cell(s.end)).max().unwrap_or(0);
    let grid = |v: &[DiarSegment], names: &[String]| {
        let mut g = vec![vec![false; len]; names.len()];
        for s in v {
            let k = names.iter().position(|n| *n == s.speaker).unwrap();
            for c in cell(s.start)..cell(s.end) {
                g[k][c] = true;
            }
        }
        g
    };
    let (rg, hg) = (grid(r, &rn), grid(h, &hn));
    let n = rn.len().max(hn.len());
    let mut best_correct = 0u64;
    for p in permutations(n) {
        let mut correct = 0u64;
        for t in 0..len {
            for (i, &j) in p.iter().enumerate() {
                if i < rn.len() && j < hn.len() && rg[i][t] && hg[j][t] {
                    correct += 1;
                }
            }
        }
        best_correct = best_correct.max(correct);
    }
    let (mut total, mut miss, mut fa, mut both) = (0u64, 0u64, 0u64, 0u64);
    for t in 0..len {
        let nr = rg.iter().filter(|g| g[t]).count() as u64;
        let nh = hg.iter().filter(|g| g[t]).count() as u64;
        total += nr;
        miss += nr.saturating_sub(nh);
        fa += nh.saturating_sub(nr);
        both += nr.min(nh);
    }
    (total, both - best_correct, miss, fa)
}

/// Up to 4 speakers and 20 segments on a 10 ms grid.
pub fn random_segments(rng: &mut ChaCha8Rng, prefix: &str) -> Vec<DiarSegment> {
    let spk = rng.random_range(1..=4);
    let n = rng.random_range(0..=20);
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..300) as f64 / 100.0;
            let d = rng.random_range(1..100) as f64 / 100.0;
            seg(&format!("{prefix}{}", rng.random_range(0..spk)), a, a + d)
        })
        .collect()
}

pub fn random_transcripts(rng: &mut ChaCha8Rng, prefix: &str) -> BTreeMap<String, Vec<String>> {
    let vocab = ["a", "b", "c", "d", "e"];
    let k = rng.random_range(1..=4);
    (0..k)
        .map(|i| {
            let n = rng.random_range(0..6);
            (format!("{prefix}{i}"), (0..n).map(|_| vocab[rng.random_range(0..5)].to_string()).collect())
        })
        .collect()
}

/// Minimum total word errors over every pairing of padded speaker lists.
pub fn brute_cpwer_errors(r: &BTreeMap<String, Vec<String>>, h: &BTreeMap<String, Vec<String>>) -> usize {
    let rv: Vec<&Vec<String>> = r.values().collect();
    let hv: Vec<&Vec<String>> = h.values().collect();
    let n = rv.len().max(hv.len());
    let empty = Vec::new();
    permutations(n)
        .into_iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &j)| wer(rv.get(i).copied().unwrap_or(&empty), hv.get(j).copied().unwrap_or(&empty)).errors())
                .sum::<usize>()
        })
        .min()
        .unwrap()
}

/// `clusters` unit centroids with pairwise cosine <= 0.1 plus Gaussian noise.
pub fn clustered(clusters: usize, per: &[usize], sigma: f64, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut centers: Vec<Vec<f64>> = Vec::new();
    while centers.len() < clusters {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        if centers.iter().all(|c| cosine(c, &v) <= 0.1) {
            centers.push(v);
        }
    }
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut emb = Vec::new();
    let mut truth = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per[c] {
            emb.push(center.iter().map(|x| x + noise.sample(&mut rng)).collect());
            truth.push(c);
        }
    }
    (emb, truth)
}

/// True when `a` and `b` describe the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Scalar readout `u X r` with fixed random `u` and `r`, so every output
/// coordinate gets a distinct weight.
pub fn readout(g: &mut Graph<f64>, x: NodeId, seed: u64) -> Result<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (g.value(x).rows(), g.value(x).cols());
    let u = g.constant(random_tensor(&mut rng, &[1, rows], 1.0));
    let r = g.constant(random_tensor(&mut rng, &[cols, 1], 1.0));
    let ux = g.matmul(u, x)?;
    let s = g.matmul(ux, r)?;
    Ok(g.sum(s))
}

pub const GRAD_EPS: f64 = 1e-3;

/// One named finite-difference check; running it yields the worst relative
/// error over all checked coordinates.
pub struct GradCase {
    pub name: &'static str,
    pub run: Box<dyn Fn() -> Result<f64>>,
}

fn op_case<F>(name: &'static str, inputs: Vec<Tensor<f64>>, f: F) -> GradCase
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId> + 'static,
{
    GradCase { name, run: Box::new(move || grad_check(&f, &inputs, GRAD_EPS)) }
}

fn store_case<F>(name: &'static str, store: ParamStore<f64>, f: F) -> GradCase
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId> + 'static,
{
    GradCase { name, run: Box::new(move || grad_check_store(&store, &f, GRAD_EPS, None)) }
}

/// Every graph primitive, layer and the time heads at random dimensions of
/// at most 16.
pub fn op_grad_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c, k) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16));
    let heads = [1usize, 2, 4][rng.random_range(0..3)];
    let dh = rng.random_range(1..=16 / heads) * heads;
    let (lq, lk) = (rng.random_range(1..=16), rng.random_range(1..=16));
    let vocab = rng.random_range(2..=16);
    let ids: Vec<usize> = (0..rng.random_range(1..=16)).map(|_| rng.random_range(0..vocab)).collect();
    let targets: Vec<Option<usize>> = (0..r).map(|i| (i % 3 != 2).then(|| rng.random_range(0..c))).collect();
    let start = rng.random_range(0..c);
    let len = rng.random_range(1..=c - start);
    let scale_c = rng.random_range(-2.0..2.0);
    let ro: u64 = rng.random();
    let ln_dim = c.max(3);

    let mut t = |shape: &[usize], scale: f64| random_tensor(&mut rng, shape, scale);
    let mut cases = vec![
        op_case("matmul", vec![t(&[r, c], 1.0), t(&[c, k], 1.0)], move |g, x| {
            let y = g.matmul(x[0], x[1])?;
            readout(g, y, ro)
        }),
        op_case("matmul_t", vec![t(&[c, r], 1.0), t(&[k, c], 1.0)], move |g, x| {
            let y = g.matmul_t(x[0], x[1], true, true)?;
            readout(g, y, ro)
        }),
        op_case("add", vec![t(&[r, c], 1.0), t(&[r, c], 1.0)], move |g, x| {
            let y = g.add(x[0], x[1])?;
            readout(g, y, ro)
        }),
        op_case("add_row", vec![t(&[r, c], 1.0), t(&[c], 1.0)], move |g, x| {
            let y = g.add_row(x[0], x[1])?;
            readout(g, y, ro)
        }),
        op_case("scale", vec![t(&[r, c], 1.0)], move |g, x| {
            let y = g.scale(x[0], scale_c);
            readout(g, y, ro)
        }),
        op_case("gelu", vec![t(&[r, c], 3.0)], move |g, x| {
            let y = g.gelu(x[0]);
            readout(g, y, ro)
        }),
        op_case("layer_norm", vec![t(&[r, ln_dim], 2.0), t(&[ln_dim], 1.0), t(&[ln_dim], 1.0)], move |g, x| {
            let y = g.layer_norm(x[0], x[1], x[2])?;
            readout(g, y, ro)
        }),
        op_case("softmax", vec![t(&[r, c], 3.0)], move |g, x| {
            let y = g.softmax(x[0])?;
            readout(g, y, ro)
        }),
        op_case("attention", vec![t(&[lq, dh], 1.0), t(&[lk, dh], 1.0), t(&[lk, dh], 1.0)], move |g, x| {
            let y = g.attention(x[0], x[1], x[2], heads, false)?;
            readout(g, y, ro)
        }),
        op_case("causal_attention", vec![t(&[lq, dh], 1.0), t(&[lq, dh], 1.0), t(&[lq, dh], 1.0)], move |g, x| {
            let y = g.attention(x[0], x[1], x[2], heads, true)?;
            readout(g, y, ro)
        }),
        op_case("embed", vec![t(&[vocab, c], 1.0)], move |g, x| {
            let y = g.embed(x[0], &ids)?;
            readout(g, y, ro)
        }),
        op_case("stack2", vec![t(&[r, c], 1.0)], move |g, x| {
            let y = g.stack2(x[0]);
            readout(g, y, ro)
        }),
        op_case("row_normalize", vec![t(&[r, c], 1.0)], move |g, x| {
            let y = g.row_normalize(x[0]);
            readout(g, y, ro)
        }),
        op_case("cross_entropy", vec![t(&[r, c], 3.0)], move |g, x| g.cross_entropy(x[0], &targets)),
        op_case("sum", vec![t(&[r, c], 1.0)], move |g, x| {
            let y = g.gelu(x[0]);
            Ok(g.sum(y))
        }),
        op_case("slice_cols", vec![t(&[r, c], 1.0)], move |g, x| {
            let y = g.slice_cols(x[0], start, len)?;
            readout(g, y, ro)
        }),
        op_case("concat_cols", vec![t(&[r, c], 1.0), t(&[r, k], 1.0)], move |g, x| {
            let y = g.concat_cols(&[x[0], x[1], x[0]])?;
            readout(g, y, ro)
        }),
    ];

    let jitter = |s: &mut ParamStore<f64>, rng: &mut ChaCha8Rng| {
        for id in s.ids().collect::<Vec<_>>() {
            s.get_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
    };

    let mut s = ParamStore::new();
    let lin = Linear::new(&mut s, "lin", c, k, true, &mut rng);
    let ln = LayerNorm::new(&mut s, "ln", ln_dim);
    jitter(&mut s, &mut rng);
    let x = s.insert("x", random_tensor(&mut rng, &[r, c], 1.0));
    let xl = s.insert("xl", random_tensor(&mut rng, &[r, ln_dim], 2.0));
    cases.push(store_case("linear+layer_norm", s, move |g, s| {
        let xn = g.param(s, x);
        let y = lin.forward(g, s, xn)?;
        let a = readout(g, y, ro)?;
        let xn = g.param(s, xl);
        let y = ln.forward(g, s, xn)?;
        let b = readout(g, y, ro ^ 1)?;
        g.add(a, b)
    }));

    let mut s = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut s, "mha", dh, heads, &mut rng);
    let ff = FeedForward::new(&mut s, "ff", dh, k, &mut rng);
    jitter(&mut s, &mut rng);
    let q = s.insert("q", random_tensor(&mut rng, &[lq, dh], 1.0));
    let m = s.insert("m", random_tensor(&mut rng, &[lk, dh], 1.0));
    let causal = lq == lk;
    cases.push(store_case("attention_block", s, move |g, s| {
        let (qn, mn) = (g.param(s, q), g.param(s, m));
        let a = mha.forward(g, s, qn, mn, causal)?;
        let y = ff.forward(g, s, a)?;
        readout(g, y, ro)
    }));

    let mut s = ParamStore::new();
    let layers = rng.random_range(1..=3);
    let (hid, sub) = (rng.random_range(1..=16), rng.random_range(1..=16));
    let frames = rng.random_range(1..=16);
    let tokens = rng.random_range(1..=16);
    let heads_t = TimeHeads::new(&mut s, hid, sub, layers, &mut rng);
    jitter(&mut s, &mut rng);
    let zs: Vec<_> = (0..layers).map(|l| s.insert(&format!("z{l}"), random_tensor(&mut rng, &[tokens, hid], 1.0))).collect();
    let h = s.insert("h", random_tensor(&mut rng, &[frames, hid], 1.0));
    let timings: Vec<Option<FrameSpan>> = (0..tokens)
        .map(|i| {
            (i % 4 != 3).then(|| {
                let a = rng.random_range(0..frames);
                FrameSpan { start: a, end: rng.random_range(a..frames) }
            })
        })
        .collect();
    cases.push(store_case("time_heads", s, move |g, s| {
        let qs: Vec<NodeId> = zs.iter().map(|&z| g.param(s, z)).collect();
        let hn = g.param(s, h);
        let logits = heads_t.logits(g, s, &qs, hn)?;
        time_ce_loss(g, &logits, &timings)
    }));
    cases
}

/// A model with every dimension at most 16.
pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        feat_dim: 4,
        hidden: 4,
        profile_dim: 4,
        ff_dim: 8,
        heads: 2,
        encoder_layers: 1,
        speaker_encoder_layers: 1,
        asr_decoder_layers: 2,
        speaker_decoder_layers: 1,
        subspace_dim: 4,
        frame_period: 0.01,
        init_seed: seed,
    }
}

pub fn tiny_vocab() -> Vocabulary {
    Vocabulary::new(&["a", "b", "c", "d"]).unwrap()
}

pub fn random_features(rng: &mut impl Rng, frames: usize, dim: usize) -> AcousticFeatures {
    AcousticFeatures::new(random_tensor(rng, &[frames, dim], 1.0), 0.01).unwrap()
}

pub fn random_profiles(rng: &mut impl Rng, k: usize, dim: usize) -> ProfileSet {
    ProfileSet::new(
        (0..k)
            .map(|i| SpeakerProfile { id: format!("p{i}"), vector: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect() })
            .collect(),
    )
    .unwrap()
}

/// Random serialized reference with `speakers` runs over `vocab`'s regular
/// tokens, timed inside `encoder_frames`.
pub fn random_reference(rng: &mut impl Rng, vocab: &Vocabulary, encoder_frames: usize, speakers: usize) -> SerializedReference {
    let regular = vocab.regular_ids();
    let parts: Vec<SotPart> = (0..speakers)
        .map(|s| {
            let n = rng.random_range(1..=3);
            let tokens = (0..n).map(|_| regular[rng.random_range(0..regular.len())]).collect();
            let timings = (0..n)
                .map(|_| {
                    let a = rng.random_range(0..encoder_frames);
                    FrameSpan { start: a, end: rng.random_range(a..encoder_frames) }
                })
                .collect();
            SotPart { speaker: s, tokens, timings: Some(timings) }
        })
        .collect();
    serialize_sot(&parts, vocab).unwrap()
}

/// Tiny model with every parameter, including zero-initialized time-head
/// queries, moved to a random point.
pub fn random_tiny_model(seed: u64) -> SaAsr<f64> {
    let mut m = SaAsr::<f64>::new(tiny_config(seed), tiny_vocab()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for id in m.params.ids().collect::<Vec<_>>() {
        m.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    m
}

/// Finite-difference check of the full combined loss over every parameter.
pub fn combined_loss_case(seed: u64) -> GradCase {
    let model = random_tiny_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.random_range(5..=16);
    let k = rng.random_range(1..=3);
    let features = random_features(&mut rng, frames, model.config().feat_dim);
    let profiles = random_profiles(&mut rng, k, model.config().profile_dim);
    let reference = random_reference(&mut rng, model.vocab(), ModelConfig::encoder_frames(frames), k);
    let store = model.params.clone();
    let model = std::cell::RefCell::new(model);
    store_case("combined_loss", store, move |g, s| {
        let mut m = model.borrow_mut();
        m.params.clone_from(s);
        m.combined_loss(g, &features, &profiles, &reference)
    })
}

fn plain_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn row_dot(a: &[f64], w: &Tensor<f64>, col: usize) -> f64 {
    a.iter().enumerate().map(|(r, x)| x * w.row(r)[col]).sum()
}

/// Reference time distribution computed with plain loops:
/// `softmax_j( sum_l (z_l[i] Wq_l) . (H[j] Wk_l) / sqrt(f) )` over the
/// given `(z_l, Wq_l, Wk_l)` layers.
pub fn reference_time_distribution(
    layers: &[(&Tensor<f64>, &Tensor<f64>, &Tensor<f64>)],
    h: &Tensor<f64>,
    sub: usize,
) -> Vec<Vec<f64>> {
    let tokens = layers[0].0.rows();
    (0..tokens)
        .map(|i| {
            let logits: Vec<f64> = (0..h.rows())
                .map(|j| {
                    layers
                        .iter()
                        .map(|(z, wq, wk)| (0..sub).map(|d| row_dot(z.row(i), wq, d) * row_dot(h.row(j), wk, d)).sum::<f64>())
                        .sum::<f64>()
                        / (sub as f64).sqrt()
                })
                .collect();
            plain_softmax(&logits)
        })
        .collect()
}

fn max_dev(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

/// Deviations of the time heads from their closed forms for one seed:
/// `(uniform, single_layer, layer_sum)`. Zero query weights must give
/// the uniform distribution; with one nonzero layer the heads must equal
/// single-layer attention; in general the per-layer scores are summed
/// before one softmax.
pub fn time_head_deviations(seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.random_range(2..=4);
    let (hid, sub) = (rng.random_range(2..=16), rng.random_range(1..=16));
    let (frames, tokens) = (rng.random_range(2..=16), rng.random_range(1..=16));
    let mut s = ParamStore::<f64>::new();
    let heads = TimeHeads::new(&mut s, hid, sub, layers, &mut rng);
    let z: Vec<Tensor<f64>> = (0..layers).map(|_| random_tensor(&mut rng, &[tokens, hid], 1.0)).collect();
    let h = random_tensor(&mut rng, &[frames, hid], 1.0);

    let post = heads.posteriors(&s, &z, &h).unwrap();
    let uniform =
        post.iter().flat_map(|p| p.start.iter().chain(&p.end)).map(|&a| (a - 1.0 / frames as f64).abs()).fold(0.0, f64::max);

    let only = rng.random_range(0..layers);
    let l = &heads.layers[only];
    for id in [l.start_query, l.end_query] {
        *s.get_mut(id) = random_tensor(&mut rng, &[hid, sub], 1.0);
    }
    let post = heads.posteriors(&s, &z, &h).unwrap();
    let want_start = reference_time_distribution(&[(&z[only], s.get(l.start_query), s.get(l.start_key))], &h, sub);
    let want_end = reference_time_distribution(&[(&z[only], s.get(l.end_query), s.get(l.end_key))], &h, sub);
    let got_start: Vec<Vec<f64>> = post.iter().map(|p| p.start.clone()).collect();
    let got_end: Vec<Vec<f64>> = post.iter().map(|p| p.end.clone()).collect();
    let single = max_dev(&got_start, &want_start).max(max_dev(&got_end, &want_end));

    for l in &heads.layers {
        for id in [l.start_query, l.end_query] {
            *s.get_mut(id) = random_tensor(&mut rng, &[hid, sub], 1.0);
        }
    }
    let post = heads.posteriors(&s, &z, &h).unwrap();
    let start_layers: Vec<_> = heads.layers.iter().zip(&z).map(|(l, z)| (z, s.get(l.start_query), s.get(l.start_key))).collect();
    let end_layers: Vec<_> = heads.layers.iter().zip(&z).map(|(l, z)| (z, s.get(l.end_query), s.get(l.end_key))).collect();
    let got_start: Vec<Vec<f64>> = post.iter().map(|p| p.start.clone()).collect();
    let got_end: Vec<Vec<f64>> = post.iter().map(|p| p.end.clone()).collect();
    let sum = max_dev(&got_start, &reference_time_distribution(&start_layers, &h, sub))
        .max(max_dev(&got_end, &reference_time_distribution(&end_layers, &h, sub)));
    (uniform, single, sum)
}

/// Builds weights that point every token's start and end at chosen frames
/// and returns `(wanted, decoded)` frame pairs per token.
///
/// Encoder frames are distinct unit vectors, token `i`'s query state is the
/// basis vector `e_i`, and the key projection's column `i` holds the target
/// frame, so the score of frame `j` is proportional to `H[j] . H[target]`,
/// which peaks only at the target.
pub fn constructed_argmax(seed: u64) -> Vec<((usize, usize), (usize, usize))> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hid = 16;
    let (frames, tokens) = (rng.random_range(2..=16), rng.random_range(1..=8));
    let sub = tokens;
    let mut h = random_tensor(&mut rng, &[frames, hid], 1.0);
    for j in 0..frames {
        let n = h.row(j).iter().map(|x| x * x).sum::<f64>().sqrt();
        h.row_mut(j).iter_mut().for_each(|x| *x /= n);
    }
    let mut z = Tensor::zeros(&[tokens, hid]);
    for i in 0..tokens {
        z.row_mut(i)[i] = 1.0;
    }
    let wanted: Vec<(usize, usize)> = (0..tokens)
        .map(|_| {
            let a = rng.random_range(0..frames);
            (a, rng.random_range(a..frames))
        })
        .collect();
    let mut s = ParamStore::<f64>::new();
    let heads = TimeHeads::new(&mut s, hid, sub, 1, &mut rng);
    let l = heads.layers[0].clone();
    let gain = 8.0;
    for (q, k, pick) in [(l.start_query, l.start_key, 0usize), (l.end_query, l.end_key, 1)] {
        let mut wq = Tensor::zeros(&[hid, sub]);
        let mut wk = Tensor::zeros(&[hid, sub]);
        for (i, w) in wanted.iter().enumerate() {
            wq.row_mut(i)[i] = gain;
            let target = if pick == 0 { w.0 } else { w.1 };
            for d in 0..hid {
                wk.row_mut(d)[i] = gain * h.row(target)[d];
            }
        }
        *s.get_mut(q) = wq;
        *s.get_mut(k) = wk;
    }
    let post = heads.posteriors(&s, &[z], &h).unwrap();
    wanted.into_iter().zip(post.iter().map(|p| (p.start_frame(), p.end_frame()))).collect()
}

/// Largest `|sum - 1|` over every row of `o`, `beta`, and the start and end
/// distributions, teacher-forced and during greedy decoding.
pub fn softmax_sum_deviation(seed: u64) -> f64 {
    let model = random_tiny_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
    let frames = rng.random_range(5..=16);
    let k = rng.random_range(1..=4);
    let features = random_features(&mut rng, frames, model.config().feat_dim);
    let profiles = random_profiles(&mut rng, k, model.config().profile_dim);
    let reference = random_reference(&mut rng, model.vocab(), ModelConfig::encoder_frames(frames), k);
    let mut g = Graph::new();
    let x: Tensor<f64> = features.frames().clone();
    let f = model.forward(&mut g, &x, &profiles, &model.teacher_prefix(&reference)).unwrap();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let logits = g.value(f.decoded.logits);
    rows.extend((0..logits.rows()).map(|i| t2d_core::numeric::softmax(logits.row(i)).unwrap()));
    let beta = g.value(f.profiles.weights);
    rows.extend((0..beta.rows()).map(|i| beta.row(i).to_vec()));
    for p in t2d_core::alignment::posteriors_from_logits(g.value(f.time.start), g.value(f.time.end)).unwrap() {
        rows.push(p.start);
        rows.push(p.end);
    }
    let d = model.greedy_decode(&features, &profiles, 12).unwrap();
    rows.extend(d.speaker_weights);
    for p in d.hypothesis.posteriors.into_iter().flatten() {
        rows.push(p.start);
        rows.push(p.end);
    }
    rows.iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
}

/// Decodes with the profiles and with a permutation of them. Returns a
/// description of the first difference beyond relabeling, if any.
pub fn permutation_mismatch(seed: u64) -> Option<String> {
    let model = random_tiny_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
    let frames = rng.random_range(5..=16);
    let k = rng.random_range(2..=4);
    let features = random_features(&mut rng, frames, model.config().feat_dim);
    let profiles = random_profiles(&mut rng, k, model.config().profile_dim);
    let mut perm: Vec<usize> = (0..k).collect();
    while perm.iter().enumerate().all(|(i, &p)| i == p) {
        perm.swap(rng.random_range(0..k), rng.random_range(0..k));
    }
    let mut inverse = vec![0; k];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let a = model.greedy_decode(&features, &profiles, 12).unwrap().hypothesis;
    let b = model.greedy_decode(&features, &profiles.permuted(&perm).unwrap(), 12).unwrap().hypothesis;
    if a.tokens != b.tokens {
        return Some(format!("tokens {:?} vs {:?}", a.tokens, b.tokens));
    }
    let mapped: Vec<usize> = a.speakers.iter().map(|&s| inverse[s]).collect();
    if mapped != b.speakers {
        return Some(format!("speakers {mapped:?} vs {:?} under {perm:?}", b.speakers));
    }
    if a.timings != b.timings {
        return Some("timings differ".into());
    }
    None
}

pub fn tok(s: &str, a: f64, b: f64) -> TimedToken {
    TimedToken { speaker: s.into(), token: "w".into(), start: a, end: b }
}

/// Hand-worked `tokens_to_segments` cases with merge gap and duration
/// limit both 2 s. Returns a description of every mismatch.
pub fn token_segment_fixture_mismatches() -> Vec<String> {
    let cases: Vec<(&str, Vec<TimedToken>, Vec<DiarSegment>)> = vec![
        ("gap below merge gap", vec![tok("a", 0.0, 0.4), tok("a", 0.5, 0.9)], vec![seg("a", 0.0, 0.9)]),
        ("gap at merge gap", vec![tok("a", 0.0, 0.4), tok("a", 2.4, 2.9)], vec![seg("a", 0.0, 0.4), seg("a", 2.4, 2.9)]),
        ("long token dropped", vec![tok("a", 1.0, 3.5), tok("a", 4.0, 4.5)], vec![seg("a", 4.0, 4.5)]),
        ("duration at limit dropped", vec![tok("a", 1.0, 3.0)], vec![]),
        ("end before start dropped", vec![tok("a", 1.0, 0.5)], vec![]),
        (
            "interleaved speakers",
            vec![tok("a", 0.0, 0.3), tok("b", 0.2, 0.6), tok("a", 0.7, 1.0), tok("b", 5.0, 5.5)],
            vec![seg("a", 0.0, 1.0), seg("b", 0.2, 0.6), seg("b", 5.0, 5.5)],
        ),
    ];
    cases
        .into_iter()
        .filter_map(|(name, toks, want)| {
            let got = tokens_to_segments(&toks, 2.0, 2.0);
            (got != want).then(|| format!("{name}: got {got:?}, want {want:?}"))
        })
        .collect()
}

pub fn random_tokens(rng: &mut impl Rng) -> Vec<TimedToken> {
    (0..rng.random_range(0..30))
        .map(|_| {
            let a = rng.random_range(0.0..30.0);
            tok(["a", "b", "c"][rng.random_range(0..3)], a, a + rng.random_range(-0.5..1.5))
        })
        .collect()
}

/// First violation of the segment invariants: positive durations and at
/// least `merge_gap` between consecutive segments of one speaker.
pub fn segment_violation(segs: &[DiarSegment], merge_gap: f64) -> Option<String> {
    if let Some(s) = segs.iter().find(|s| s.start >= s.end) {
        return Some(format!("empty segment {s:?}"));
    }
    let mut speakers: Vec<&str> = segs.iter().map(|s| s.speaker.as_str()).collect();
    speakers.sort();
    speakers.dedup();
    for spk in speakers {
        let mut mine: Vec<&DiarSegment> = segs.iter().filter(|s| s.speaker == spk).collect();
        mine.sort_by(|a, b| a.start.total_cmp(&b.start));
        for w in mine.windows(2) {
            if w[1].start - w[0].end < merge_gap {
                return Some(format!("gap {:?} -> {:?}", w[0], w[1]));
            }
        }
    }
    None
}
