mod common;

use common::{permutation_mismatch, softmax_sum_deviation};

#[test]
fn distributions_sum_to_one() {
    for seed in 0..20 {
        let d = softmax_sum_deviation(seed);
        assert!(d <= 1e-6, "seed {seed}: {d:e}");
    }
}

#[test]
fn decoding_is_equivariant_to_profile_order() {
    for seed in 0..20 {
        assert_eq!(permutation_mismatch(seed), None, "seed {seed}");
    }
}
