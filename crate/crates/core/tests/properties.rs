use mecs_core::pattern::{build_prob_pattern, sample_fixed_count, PatternMode, PatternWeights};
use mecs_core::quant::{psnr, rmse};
use mecs_core::recon::llr_denoise;
use mecs_core::schedule::{build_schedule, encoding_jump_metric, sampled_locations};
use mecs_core::signal::{adjoint, encode, generate_coils, uniform_echo_times};
use mecs_core::tensor::{fft_centered, ifft_centered};
use mecs_core::{Complex64, ComplexTensor, KSpaceData, MultiEchoImage, RealTensor, Rng};
use proptest::prelude::*;

fn complex_tensor(shape: &[usize], rng: &mut Rng) -> ComplexTensor {
    let n = shape.iter().product();
    ComplexTensor::from_vec(
        shape,
        (0..n)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect(),
    )
    .unwrap()
}

fn weights(nt: usize, ny: usize, nz: usize, gamma: f64, seed: u64) -> PatternWeights {
    let mut rng = Rng::new(seed);
    let mut w = PatternWeights::zeros(nt, ny, nz, 0.25, gamma, PatternMode::PerEcho);
    for v in w.w.data_mut() {
        *v = 2.0 * rng.normal();
    }
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn centered_fft_is_unitary(ny in 1usize..12, nz in 1usize..12, seed in any::<u64>()) {
        let x = complex_tensor(&[2, ny, nz], &mut Rng::new(seed));
        let k = fft_centered(&x, &[1, 2]).unwrap();
        prop_assert!((k.norm() - x.norm()).abs() <= 1e-12 * x.norm());
        let back = ifft_centered(&k, &[1, 2]).unwrap();
        let err = back.data().iter().zip(x.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12);
    }

    #[test]
    fn encoding_adjoint_pair(
        ny in 1usize..10,
        nz in 1usize..10,
        nc in 1usize..4,
        nt in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let coils = generate_coils(nc, [ny, nz], seed).unwrap();
        let masks = RealTensor::from_vec(
            &[nt, ny, nz],
            (0..nt * ny * nz).map(|_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 }).collect(),
        ).unwrap();
        let tes = uniform_echo_times(nt, 0.004, 0.004);
        let x = MultiEchoImage::new(complex_tensor(&[nt, ny, nz], &mut rng), tes.clone()).unwrap();
        let y = KSpaceData::new(complex_tensor(&[nt, nc, ny, nz], &mut rng), tes).unwrap();
        let lhs = encode(&x, &coils, &masks).unwrap().data().inner(y.data());
        let rhs = x.data().inner(adjoint(&y, &coils, &masks).unwrap().data());
        prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + lhs.norm()));
    }

    #[test]
    fn probability_pattern_mean_is_gamma(
        nt in 1usize..4,
        ny in 4usize..16,
        nz in 4usize..16,
        gamma in 0.05f64..0.6,
        seed in any::<u64>(),
    ) {
        let p = build_prob_pattern(&weights(nt, ny, nz, gamma, seed)).unwrap();
        for j in 0..nt {
            let slab = p.p.slab(j);
            let m = slab.iter().sum::<f64>() / slab.len() as f64;
            prop_assert!((m - gamma).abs() < 1e-9);
            prop_assert!(slab.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn fixed_count_masks_hit_the_count(
        ny in 8usize..20,
        nz in 8usize..20,
        frac in 0.1f64..0.5,
        calib in 0usize..4,
        seed in any::<u64>(),
    ) {
        let p = build_prob_pattern(&weights(2, ny, nz, 0.3, seed)).unwrap();
        let count = ((frac * (ny * nz) as f64).round() as usize).max(calib * calib);
        let u = sample_fixed_count(&p, count, &mut Rng::new(seed), calib).unwrap();
        for j in 0..2 {
            prop_assert_eq!(u.count(j), count);
        }
    }

    #[test]
    fn schedule_covers_each_mask_once(
        ny in 8usize..24,
        nz in 8usize..24,
        n_seg in 1usize..6,
        seed in any::<u64>(),
    ) {
        let p = build_prob_pattern(&weights(3, ny, nz, 0.3, seed)).unwrap();
        let u = sample_fixed_count(&p, (0.3 * (ny * nz) as f64) as usize, &mut Rng::new(seed), 2).unwrap();
        prop_assume!(u.count(0) >= n_seg);
        let s = build_schedule(&u, n_seg).unwrap();
        for j in 0..3 {
            let mut got = s.sequences[j].clone();
            let mut want = sampled_locations(u.u.slab(j), ny, nz);
            got.sort();
            want.sort();
            prop_assert_eq!(got, want);
        }
        let sizes = &s.segment_sizes;
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(encoding_jump_metric(&s).intra_mean.is_finite());
    }

    #[test]
    fn llr_never_increases_the_norm(lambda in 0.0f64..5.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = MultiEchoImage::new(complex_tensor(&[3, 9, 7], &mut rng), uniform_echo_times(3, 0.004, 0.004)).unwrap();
        let d = llr_denoise(&x, 4, lambda).unwrap();
        prop_assert!(d.data().norm() <= x.data().norm() * (1.0 + 1e-12));
    }

    #[test]
    fn metrics_of_identical_images(n in 2usize..12, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let x = RealTensor::from_vec(&[n, n], (0..n * n).map(|_| 0.1 + rng.uniform()).collect()).unwrap();
        prop_assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
        prop_assert_eq!(rmse(&x, &x).unwrap(), 0.0);
    }
}
