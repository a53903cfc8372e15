mod common;

use common::models::{generator_gradcheck, tagger_gradcheck};

const SEEDS: [u64; 3] = [1, 2, 3];
const TOLERANCE: f64 = 1e-4;

#[test]
fn tagger_gradients_match_central_differences() {
    for (seed, lambda, err, name) in tagger_gradcheck(&SEEDS) {
        assert!(err < TOLERANCE, "seed {seed} lambda {lambda}: {name} rel error {err:.2e}");
    }
}

#[test]
fn generator_gradients_match_central_differences() {
    for (seed, err, name) in generator_gradcheck(&SEEDS) {
        assert!(err < TOLERANCE, "seed {seed}: {name} rel error {err:.2e}");
    }
}
