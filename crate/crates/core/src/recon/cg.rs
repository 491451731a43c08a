use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::signal::encoding::{adjoint_plane_accumulate, encode_plane};
use crate::signal::{adjoint, CoilSet, KSpaceData, MultiEchoImage};
use crate::tensor::{ComplexTensor, RealTensor};

/// `a / b`, with `0` when `b == 0` (a zero residual ends the iteration).
pub(crate) fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// `Re <a, b>` accumulated as `re*re + im*im`.
pub(crate) fn real_dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

/// `(A_j^H A_j + half_rho I) p` for one echo.
fn normal_apply(
    p: &[Complex64],
    coils: &CoilSet,
    mask: &[f64],
    half_rho: f64,
    (ny, nz): (usize, usize),
) -> Vec<Complex64> {
    let plane = ny * nz;
    let mut acc = vec![Complex64::default(); plane];
    let mut ksp = vec![Complex64::default(); plane];
    let mut tmp = vec![Complex64::default(); plane];
    for k in 0..coils.n_coils() {
        encode_plane(p, coils.map(k), mask, &mut ksp, ny, nz);
        adjoint_plane_accumulate(&ksp, coils.map(k), mask, &mut tmp, &mut acc, ny, nz);
    }
    for (a, &v) in acc.iter_mut().zip(p) {
        *a += v * half_rho;
    }
    acc
}

/// Conjugate gradients from a zero start on one echo. Returns the iterate
/// and the residual norm before each iteration and after the last.
pub(crate) fn cg_echo(
    rhs: &[Complex64],
    coils: &CoilSet,
    mask: &[f64],
    half_rho: f64,
    iters: usize,
    dims: (usize, usize),
) -> (Vec<Complex64>, Vec<f64>) {
    let mut x = vec![Complex64::default(); rhs.len()];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs = real_dot(&r, &r);
    let mut history = vec![rs.sqrt()];
    for it in 0..iters {
        let ap = normal_apply(&p, coils, mask, half_rho, dims);
        let alpha = safe_div(rs, real_dot(&p, &ap));
        for (xi, &pi) in x.iter_mut().zip(&p) {
            *xi += pi * alpha;
        }
        for (ri, &api) in r.iter_mut().zip(&ap) {
            *ri -= api * alpha;
        }
        let rs_new = real_dot(&r, &r);
        history.push(rs_new.sqrt());
        if it + 1 < iters {
            let beta = safe_div(rs_new, rs);
            for (pi, &ri) in p.iter_mut().zip(&r) {
                *pi = ri + *pi * beta;
            }
            rs = rs_new;
        }
    }
    (x, history)
}

pub(crate) fn check_finite(name: &str, x: &[Complex64]) -> Result<()> {
    match x
        .iter()
        .position(|c| !c.re.is_finite() || !c.im.is_finite())
    {
        Some(i) => Err(Error::numeric(format!(
            "{name} has a non-finite value at index {i}"
        ))),
        None => Ok(()),
    }
}

/// `A^H b + (rho / 2) v - u`.
pub(crate) fn dc_rhs(
    atb: &ComplexTensor,
    v: &ComplexTensor,
    u: &ComplexTensor,
    rho: f64,
) -> ComplexTensor {
    let data = atb
        .data()
        .iter()
        .zip(v.data())
        .zip(u.data())
        .map(|((&a, &vv), &uu)| (a + vv * (rho / 2.0)) - uu)
        .collect();
    ComplexTensor::from_vec(atb.shape(), data).expect("same shape")
}

/// Solves `(A^H A + (rho / 2) I) s = rhs` per echo with a fixed number of
/// CG iterations.
pub(crate) fn solve_normal(
    rhs: &ComplexTensor,
    coils: &CoilSet,
    masks: &RealTensor,
    rho: f64,
    iters: usize,
) -> ComplexTensor {
    let (nt, ny, nz) = (rhs.shape()[0], rhs.shape()[1], rhs.shape()[2]);
    let slabs: Vec<Vec<Complex64>> = (0..nt)
        .into_par_iter()
        .map(|j| {
            cg_echo(
                rhs.slab(j),
                coils,
                masks.slab(j),
                rho / 2.0,
                iters,
                (ny, nz),
            )
            .0
        })
        .collect();
    ComplexTensor::from_vec(&[nt, ny, nz], slabs.concat()).expect("same shape")
}

/// Data-consistency step of ADMM:
/// `(A^H A + (rho / 2) I) s = A^H b + (rho / 2) v - u`, per echo, by
/// `cg_iters` conjugate-gradient iterations from `s = 0`.
pub fn data_consistency_cg(
    b: &KSpaceData,
    coils: &CoilSet,
    masks: &RealTensor,
    v: &MultiEchoImage,
    u: &MultiEchoImage,
    rho: f64,
    cg_iters: usize,
) -> Result<MultiEchoImage> {
    ensure(rho > 0.0, || format!("rho must be positive, got {rho}"))?;
    ensure(v.data().shape() == u.data().shape(), || {
        "v and u shapes differ".into()
    })?;
    check_finite("k-space data", b.data().data())?;
    check_finite("v", v.data().data())?;
    check_finite("u", u.data().data())?;
    let atb = adjoint(b, coils, masks)?;
    ensure(atb.data().shape() == v.data().shape(), || {
        format!(
            "image shape {:?} does not match data {:?}",
            v.data().shape(),
            atb.data().shape()
        )
    })?;
    let rhs = dc_rhs(atb.data(), v.data(), u.data(), rho);
    v.with_data(solve_normal(&rhs, coils, masks, rho, cg_iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{encode, full_masks, generate_coils};
    use crate::tensor::Rng;

    fn random_image(rng: &mut Rng, nt: usize, ny: usize, nz: usize) -> MultiEchoImage {
        let data = (0..nt * ny * nz)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        MultiEchoImage::new(
            ComplexTensor::from_vec(&[nt, ny, nz], data).unwrap(),
            (0..nt).map(|j| 0.002 + 0.004 * j as f64).collect(),
        )
        .unwrap()
    }

    fn rel(a: &ComplexTensor, b: &ComplexTensor) -> f64 {
        let d: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum();
        d.sqrt() / b.norm()
    }

    #[test]
    fn tiny_rho_full_sampling_returns_truth() {
        let mut rng = Rng::new(1);
        let x = random_image(&mut rng, 2, 8, 6);
        let coils = CoilSet::unit(8, 6);
        let masks = full_masks(2, 8, 6);
        let b = encode(&x, &coils, &masks).unwrap();
        let zero = x.with_data(ComplexTensor::zeros(&[2, 8, 6])).unwrap();
        let s = data_consistency_cg(&b, &coils, &masks, &zero, &zero, 1e-6, 20).unwrap();
        assert!(rel(s.data(), x.data()) < 1e-6);
    }

    #[test]
    fn huge_rho_drives_solution_to_zero() {
        let mut rng = Rng::new(2);
        let x = random_image(&mut rng, 2, 8, 8);
        let coils = generate_coils(3, [8, 8], 5).unwrap();
        let masks = full_masks(2, 8, 8);
        let b = encode(&x, &coils, &masks).unwrap();
        let zero = x.with_data(ComplexTensor::zeros(&[2, 8, 8])).unwrap();
        let s = data_consistency_cg(&b, &coils, &masks, &zero, &zero, 1e6, 5).unwrap();
        assert!(s.data().norm() < 1e-4 * x.data().norm());
    }

    #[test]
    fn residual_does_not_increase() {
        for seed in 0..10 {
            let mut rng = Rng::new(100 + seed);
            let (ny, nz) = (8, 8);
            let coils = generate_coils(2, [ny, nz], seed).unwrap();
            let mask: Vec<f64> = (0..ny * nz)
                .map(|_| (rng.uniform() < 0.4) as u8 as f64)
                .collect();
            let rhs: Vec<Complex64> = (0..ny * nz)
                .map(|_| Complex64::new(rng.normal(), rng.normal()))
                .collect();
            let (_, hist) = cg_echo(&rhs, &coils, &mask, 0.5, 8, (ny, nz));
            for w in hist.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "seed {seed}: {hist:?}");
            }
        }
    }

    #[test]
    fn cg_solves_masked_multicoil_system() {
        let mut rng = Rng::new(3);
        let (ny, nz) = (8, 8);
        let coils = generate_coils(4, [ny, nz], 9).unwrap();
        let mask: Vec<f64> = (0..ny * nz)
            .map(|_| (rng.uniform() < 0.5) as u8 as f64)
            .collect();
        let truth: Vec<Complex64> = (0..ny * nz)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        let rhs = normal_apply(&truth, &coils, &mask, 0.5, (ny, nz));
        let (x, _) = cg_echo(&rhs, &coils, &mask, 0.5, 60, (ny, nz));
        let err: f64 = x
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_finite_input_is_a_numeric_error() {
        let mut rng = Rng::new(4);
        let x = random_image(&mut rng, 1, 4, 4);
        let coils = CoilSet::unit(4, 4);
        let masks = full_masks(1, 4, 4);
        let b = encode(&x, &coils, &masks).unwrap();
        let mut bad = x.clone();
        bad.data_mut().data_mut()[3] = Complex64::new(f64::NAN, 0.0);
        let zero = x.with_data(ComplexTensor::zeros(&[1, 4, 4])).unwrap();
        let err = data_consistency_cg(&b, &coils, &masks, &bad, &zero, 1.0, 3).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(data_consistency_cg(&b, &coils, &masks, &zero, &zero, 0.0, 3).is_err());
    }
}
