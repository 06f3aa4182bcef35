//! Every two-point functional against a from-scratch complex dense evaluation.

mod common;

use common::{general_trial, rng, spiked_trial};

const TOL: f64 = 1e-12;

#[test]
fn general_family_matches_dense_evaluation() {
    let mut r = rng(41);
    for trial in 0..60 {
        let (err, what) = general_trial(&mut r, trial);
        assert!(err <= TOL, "{what}: relative error {err:e}");
    }
}

#[test]
fn spiked_family_matches_dense_evaluation() {
    let mut r = rng(61);
    for trial in 0..60 {
        let (err, what) = spiked_trial(&mut r, trial);
        assert!(err <= TOL, "{what}: relative error {err:e}");
    }
}

