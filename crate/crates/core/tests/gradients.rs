mod common;

use common::*;
use platerec::Rng;

const SEEDS: u64 = 20;

fn worst_over_seeds(f: impl Fn(&mut Rng) -> f64) -> f64 {
    (0..SEEDS).map(|s| f(&mut Rng::new(1000 + s))).fold(0.0, f64::max)
}

#[test]
fn every_layer_matches_central_differences() {
    for (name, build) in layer_cases() {
        let worst = worst_over_seeds(|rng| {
            let (net, shape) = build(rng);
            check_sequential(&net, &shape, rng)
        });
        assert!(worst < GRAD_TOL, "{name}: {worst:e}");
    }
}

#[test]
fn bilstm_matches_central_differences() {
    let worst = worst_over_seeds(check_bilstm);
    assert!(worst < GRAD_TOL, "{worst:e}");
}

#[test]
fn ctc_logit_gradient_matches_central_differences() {
    let worst = worst_over_seeds(check_ctc);
    assert!(worst < GRAD_TOL, "{worst:e}");
}

#[test]
fn toy_crnn_with_ctc_matches_central_differences() {
    let worst = worst_over_seeds(check_crnn);
    assert!(worst < GRAD_TOL, "{worst:e}");
}
