//! Shared fixtures for the benchmarks.

use mecs_core::learn::Sample;
use mecs_core::pattern::{build_prob_pattern, sample_pattern, PatternMode, PatternWeights};
use mecs_core::signal::{
    encode, full_masks, generate_coils, generate_phantom, uniform_echo_times, PhantomSpec,
};
use mecs_core::{RealTensor, Rng};

/// A Shepp-Logan sample on an `n x n` grid with `nt` echoes and `nc` coils.
pub fn sample(n: usize, nt: usize, nc: usize) -> Sample {
    let truth = generate_phantom(
        &PhantomSpec::shepp_logan([n, n]),
        &uniform_echo_times(nt, 0.004, 0.004),
    )
    .expect("valid phantom")
    .0;
    let coils = generate_coils(nc, [n, n], 1).expect("valid coils");
    let kspace = encode(&truth, &coils, &full_masks(nt, n, n)).expect("matching shapes");
    Sample {
        kspace,
        coils,
        truth,
    }
}

/// A per-echo Bernoulli mask at ratio `gamma`.
pub fn mask(n: usize, nt: usize, gamma: f64) -> RealTensor {
    let w = PatternWeights::zeros(nt, n, n, 0.25, gamma, PatternMode::PerEcho);
    let p = build_prob_pattern(&w).expect("valid weights");
    sample_pattern(&p, PatternMode::PerEcho, &mut Rng::new(7), 8)
        .expect("valid pattern")
        .u
}
