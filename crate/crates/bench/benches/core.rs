use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t2d_core::model::{ModelConfig, SaAsr, Vocabulary};
use t2d_core::numeric::Graph;
use t2d_core::pipeline::{nme_spectral_cluster, DiarSegment, SpeakerCount};
use t2d_core::scoring::der;
use t2d_core::synth::{build_training_set, SpeakerInventory, SynthConfig};

fn training_step(c: &mut Criterion) {
    let cfg = SynthConfig { max_speakers: 3, ..Default::default() };
    let vocab = Vocabulary::toy();
    let inv = SpeakerInventory::generate(&cfg, &vocab).unwrap();
    let sample = build_training_set(1, &inv, &vocab, &cfg, 3).unwrap().remove(0);
    let model: SaAsr<f32> = SaAsr::new(ModelConfig::default(), vocab).unwrap();
    c.bench_function("combined_loss_forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let l = model.combined_loss(&mut g, &sample.features, &sample.profiles, &sample.reference).unwrap();
            black_box(g.backward(l, model.params.len()).unwrap())
        })
    });
    c.bench_function("greedy_decode", |b| {
        b.iter(|| black_box(model.greedy_decode(&sample.features, &sample.profiles, 32).unwrap()))
    });
}

fn clustering(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let centers: Vec<Vec<f64>> = (0..4).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let emb: Vec<Vec<f64>> =
        (0..80).map(|i| centers[i % 4].iter().map(|x| x + rng.random_range(-0.05..0.05)).collect()).collect();
    c.bench_function("nme_spectral_cluster_80", |b| {
        b.iter(|| black_box(nme_spectral_cluster(&emb, SpeakerCount::Estimate, 8).unwrap()))
    });
}

fn scoring(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut segs = |prefix: &str| -> Vec<DiarSegment> {
        (0..200)
            .map(|_| {
                let a = rng.random_range(0..60_000) as f64 / 100.0;
                DiarSegment {
                    speaker: format!("{prefix}{}", rng.random_range(0..4)),
                    start: a,
                    end: a + rng.random_range(50..500) as f64 / 100.0,
                }
            })
            .collect()
    };
    let (r, h) = (segs("r"), segs("h"));
    c.bench_function("der_10min_200_segments", |b| b.iter(|| black_box(der(&r, &h, 0.0).unwrap())));
}

criterion_group!(benches, training_step, clustering, scoring);
criterion_main!(benches);
