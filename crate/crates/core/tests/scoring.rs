use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t2d_core::pipeline::DiarSegment;
use t2d_core::scoring::*;

mod common;
use common::{brute_cpwer_errors, brute_der, permutations, random_segments, random_transcripts, seg};

#[test]
fn der_matches_exhaustive_mapping() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let r = random_segments(&mut rng, "r");
        let h = random_segments(&mut rng, "h");
        let rep = der(&r, &h, 0.0).unwrap();
        let (total, conf, miss, fa) = brute_der(&r, &h);
        assert_eq!((rep.ref_units, rep.confusion_units, rep.miss_units, rep.fa_units), (total, conf, miss, fa));
    }
}

#[test]
fn der_examples() {
    let r = vec![seg("a", 0.0, 5.0), seg("b", 5.0, 10.0)];
    let relabeled = vec![seg("x", 0.0, 5.0), seg("y", 5.0, 10.0)];
    assert_eq!(der(&r, &relabeled, 0.0).unwrap().der, 0.0);
    let empty = der(&r, &[], 0.0).unwrap();
    assert_eq!((empty.fa, empty.ser, empty.miss, empty.der), (0.0, 0.0, 100.0, 100.0));
    // One second of b attributed to a's label.
    let h = vec![seg("x", 0.0, 6.0), seg("y", 6.0, 10.0)];
    let rep = der(&r, &h, 0.0).unwrap();
    assert!((rep.ser - 10.0).abs() < 1e-9 && rep.miss == 0.0 && rep.fa == 0.0);
    assert_eq!(rep.mapping.get("a").map(String::as_str), Some("x"));
    assert!(der(&[seg("a", -1.0, 1.0)], &[], 0.0).is_err());
}

#[test]
fn der_counts_overlap_multiply() {
    let r = vec![seg("a", 0.0, 2.0), seg("b", 1.0, 2.0)];
    let h = vec![seg("x", 0.0, 2.0)];
    let rep = der(&r, &h, 0.0).unwrap();
    assert_eq!(rep.ref_units, 300);
    assert_eq!(rep.miss_units, 100);
    assert!((rep.total_ref_speech_sec - 3.0).abs() < 1e-9);
}

#[test]
fn extra_hyp_speaker_is_false_alarm() {
    let r = vec![seg("a", 0.0, 1.0)];
    let h = vec![seg("x", 0.0, 1.0), seg("y", 1.0, 2.0)];
    let rep = der(&r, &h, 0.0).unwrap();
    assert_eq!((rep.fa_units, rep.confusion_units, rep.miss_units), (100, 0, 0));
}

#[test]
fn collar_excludes_boundaries() {
    let r = vec![seg("a", 1.0, 3.0)];
    let h = vec![seg("x", 1.1, 2.9)];
    assert!(der(&r, &h, 0.0).unwrap().der > 0.0);
    assert_eq!(der(&r, &h, 0.25).unwrap().der, 0.0);
}

#[test]
fn assignment_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let (rows, cols) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let w: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random::<f64>()).collect()).collect();
        let got = map_speakers_optimal(&w);
        let score = |m: &[Option<usize>]| m.iter().enumerate().filter_map(|(i, j)| j.map(|j| w[i][j])).sum::<f64>();
        let n = rows.max(cols);
        let best = permutations(n)
            .into_iter()
            .map(|p| p.iter().enumerate().filter(|(i, j)| *i < rows && **j < cols).map(|(i, &j)| w[i][j]).sum::<f64>())
            .fold(0.0, f64::max);
        assert!((score(&got) - best).abs() < 1e-9);
        let mut used: Vec<usize> = got.iter().flatten().copied().collect();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), got.iter().flatten().count());
    }
}

#[test]
fn permuted_diagonal_recovers_permutation() {
    let perm = [2usize, 0, 3, 1];
    let w: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if perm[i] == j { 5.0 } else { 0.1 }).collect()).collect();
    let got = map_speakers_optimal(&w);
    assert_eq!(got, perm.iter().map(|&j| Some(j)).collect::<Vec<_>>());
    let diag: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| if i == j { 3.0 } else { 1.0 }).collect()).collect();
    assert_eq!(map_speakers_optimal(&diag), vec![Some(0), Some(1), Some(2)]);
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn wer_examples() {
    let r = words("a b c d e f g h i j");
    assert_eq!(wer(&r, &r).rate(), 0.0);
    let mut h = r.clone();
    h[4] = "z".into();
    let c = wer(&r, &h);
    assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 0, 0));
    assert!((c.rate() - 10.0).abs() < 1e-12);
    let c = wer(&words("a b c d e"), &[]);
    assert_eq!((c.deletions, c.rate()), (5, 100.0));
    let c = wer(&[], &words("x y"));
    assert_eq!((c.insertions, c.rate()), (2, 200.0));
}

fn spk_map(entries: &[(&str, &str)]) -> BTreeMap<String, Vec<String>> {
    entries.iter().map(|(k, v)| (k.to_string(), words(v))).collect()
}

#[test]
fn cpwer_examples() {
    let r = spk_map(&[("a", "one two three"), ("b", "four five"), ("c", "six")]);
    let h = spk_map(&[("x", "six"), ("y", "one two three"), ("z", "four five")]);
    assert_eq!(cpwer(&r, &h).unwrap().cpwer, 0.0);

    let ref20: String = (0..20).map(|i| format!("w{i} ")).collect();
    let mut hyp20 = words(&ref20);
    hyp20[3] = "oops".into();
    let r = spk_map(&[("a", &ref20)]);
    let h: BTreeMap<String, Vec<String>> = [("x".to_string(), hyp20)].into();
    assert!((cpwer(&r, &h).unwrap().cpwer - 5.0).abs() < 1e-12);

    let r = spk_map(&[("a", "p q r s")]);
    let h = spk_map(&[("x", "p q r s"), ("y", "u v w")]);
    let rep = cpwer(&r, &h).unwrap();
    assert_eq!(rep.counts.insertions, 3);
    assert!(cpwer(&BTreeMap::new(), &h).is_err());
}

#[test]
fn cpwer_equals_brute_force_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let r = random_transcripts(&mut rng, "r");
        let h = random_transcripts(&mut rng, "h");
        let best = brute_cpwer_errors(&r, &h);
        let rep = cpwer(&r, &h).unwrap();
        assert_eq!(rep.counts.errors(), best);
        assert_eq!(rep.permutation_errors.iter().min().copied(), Some(best));
    }
}

proptest! {
    #[test]
    fn der_invariant_under_relabel_and_reorder(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_segments(&mut rng, "r");
        let h = random_segments(&mut rng, "h");
        let base = der(&r, &h, 0.0).unwrap();
        let renamed: Vec<DiarSegment> = h.iter().rev().map(|s| seg(&format!("z{}", s.speaker), s.start, s.end)).collect();
        let other = der(&r, &renamed, 0.0).unwrap();
        prop_assert_eq!(base.der, other.der);
        prop_assert_eq!(base.confusion_units + base.miss_units + base.fa_units,
            other.confusion_units + other.miss_units + other.fa_units);
    }

    #[test]
    fn wer_triangle(a in proptest::collection::vec(0u8..4, 0..8),
                    b in proptest::collection::vec(0u8..4, 0..8),
                    c in proptest::collection::vec(0u8..4, 0..8)) {
        prop_assert!(wer(&a, &c).errors() <= wer(&a, &b).errors() + wer(&b, &c).errors());
    }

    #[test]
    fn cpwer_self_is_zero(lens in proptest::collection::vec(0usize..5, 1..4)) {
        let r: BTreeMap<String, Vec<String>> = lens.iter().enumerate()
            .map(|(i, &n)| (format!("s{i}"), (0..n).map(|k| format!("w{}", k + i)).collect())).collect();
        prop_assert_eq!(cpwer(&r, &r).unwrap().cpwer, 0.0);
    }
}
