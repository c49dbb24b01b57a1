//! 100 randomized trials per layer. The strict maximum is printed; the
//! assertion excludes coordinates whose mismatch is within central-difference
//! rounding noise (see `GradcheckReport`).

use flavornet::checks::{gradient_suite, Target};

fn check(target: Target) {
    let s = gradient_suite(target, 100, 0x6772_6164 + target as u64, 1e-5).unwrap();
    println!(
        "{}: strict max {:.3e} ({} trials over 1e-4), beyond rounding {:.3e}, {} kink resamples",
        target.name(),
        s.max_rel_error,
        s.trials_over_1e4,
        s.max_rel_error_beyond_roundoff,
        s.resampled
    );
    assert_eq!(s.trials, 100);
    assert!(s.max_rel_error_beyond_roundoff <= 1e-4, "{}: {s:?}", target.name());
}

#[test]
fn gcn_gradients() {
    check(Target::Gcn);
}

#[test]
fn diffusion_gradients() {
    check(Target::Diffusion);
}

#[test]
fn gat_gradients() {
    check(Target::Gat);
}

#[test]
fn mpnn_gradients() {
    check(Target::Mpnn);
}

#[test]
fn miniature_wavenet_gradients() {
    check(Target::WaveNet);
}
