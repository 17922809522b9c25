mod common;

use common::{combined_loss_case, op_grad_cases};

const TOL: f64 = 1e-4;

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..20 {
        for case in op_grad_cases(seed) {
            let err = (case.run)().unwrap();
            assert!(err < TOL, "{} seed {seed}: relative error {err:e}", case.name);
        }
    }
}

#[test]
fn combined_loss_matches_finite_differences() {
    for seed in 0..20 {
        let case = combined_loss_case(seed);
        let err = (case.run)().unwrap();
        assert!(err < TOL, "seed {seed}: relative error {err:e}");
    }
}
