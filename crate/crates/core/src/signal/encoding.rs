use num_complex::Complex64;
use rayon::prelude::*;

use super::{CoilSet, MultiEchoImage};
use crate::error::{ensure, Result};
use crate::tensor::{
    fft2_centered_inplace, ifft2_centered_inplace, ComplexTensor, RealTensor, Rng,
};

/// Multi-coil k-space `[n_echoes, n_coils, ny, nz]` and the echo times it
/// was acquired at.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    data: ComplexTensor,
    echo_times: Vec<f64>,
}

impl KSpaceData {
    pub fn new(data: ComplexTensor, echo_times: Vec<f64>) -> Result<Self> {
        ensure(data.ndim() == 4, || {
            format!("k-space must be 4-d, got {:?}", data.shape())
        })?;
        ensure(data.shape()[0] == echo_times.len(), || {
            format!(
                "{} echoes of k-space but {} echo times",
                data.shape()[0],
                echo_times.len()
            )
        })?;
        super::validate_echo_times(&echo_times)?;
        Ok(KSpaceData { data, echo_times })
    }

    pub fn echo_times(&self) -> &[f64] {
        &self.echo_times
    }

    fn with_data(&self, data: ComplexTensor) -> KSpaceData {
        KSpaceData {
            data,
            echo_times: self.echo_times.clone(),
        }
    }

    pub fn data(&self) -> &ComplexTensor {
        &self.data
    }

    pub fn into_data(self) -> ComplexTensor {
        self.data
    }

    pub fn n_echoes(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_coils(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.data.shape()[2], self.data.shape()[3])
    }

    /// Applies `masks` (`[n_echoes, ny, nz]`) to every coil.
    pub fn masked(&self, masks: &RealTensor) -> Result<KSpaceData> {
        let (ny, nz) = self.dims();
        check_masks(masks, self.n_echoes(), ny, nz)?;
        let mut out = self.data.clone();
        let plane = ny * nz;
        for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let m = masks.slab(idx / self.n_coils());
            for (v, &u) in chunk.iter_mut().zip(m) {
                *v *= u;
            }
        }
        Ok(self.with_data(out))
    }
}

/// All-ones sampling masks.
pub fn full_masks(n_echoes: usize, ny: usize, nz: usize) -> RealTensor {
    RealTensor::full(&[n_echoes, ny, nz], 1.0)
}

fn check_masks(masks: &RealTensor, nt: usize, ny: usize, nz: usize) -> Result<()> {
    ensure(masks.shape() == [nt, ny, nz], || {
        format!("masks {:?} do not match [{nt}, {ny}, {nz}]", masks.shape())
    })
}

fn check_coils(coils: &CoilSet, ny: usize, nz: usize) -> Result<()> {
    ensure(coils.dims() == (ny, nz), || {
        format!("coil maps {:?} do not match image {ny}x{nz}", coils.dims())
    })
}

/// `b[j,k] = U_j * F(E_k * s_j)`.
pub fn encode(x: &MultiEchoImage, coils: &CoilSet, masks: &RealTensor) -> Result<KSpaceData> {
    let (ny, nz) = x.dims();
    let nt = x.n_echoes();
    let nc = coils.n_coils();
    check_coils(coils, ny, nz)?;
    check_masks(masks, nt, ny, nz)?;
    let mut out = ComplexTensor::zeros(&[nt, nc, ny, nz]);
    let plane = ny * nz;
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (j, k) = (idx / nc, idx % nc);
            encode_plane(x.data().slab(j), coils.map(k), masks.slab(j), dst, ny, nz);
        });
    KSpaceData::new(out, x.echo_times().to_vec())
}

pub(crate) fn encode_plane(
    img: &[Complex64],
    coil: &[Complex64],
    mask: &[f64],
    dst: &mut [Complex64],
    ny: usize,
    nz: usize,
) {
    for ((d, &s), &e) in dst.iter_mut().zip(img).zip(coil) {
        *d = e * s;
    }
    fft2_centered_inplace(dst, ny, nz);
    for (d, &u) in dst.iter_mut().zip(mask) {
        *d *= u;
    }
}

/// `x[j] = sum_k conj(E_k) * F^-1(U_j * b[j,k])`.
pub fn adjoint(b: &KSpaceData, coils: &CoilSet, masks: &RealTensor) -> Result<MultiEchoImage> {
    let (ny, nz) = b.dims();
    let nt = b.n_echoes();
    check_coils(coils, ny, nz)?;
    ensure(coils.n_coils() == b.n_coils(), || {
        format!(
            "{} coil maps for {} coils of data",
            coils.n_coils(),
            b.n_coils()
        )
    })?;
    check_masks(masks, nt, ny, nz)?;
    let out = adjoint_raw(b.data(), coils, masks);
    MultiEchoImage::new(out, b.echo_times().to_vec())
}

pub(crate) fn adjoint_raw(b: &ComplexTensor, coils: &CoilSet, masks: &RealTensor) -> ComplexTensor {
    let [nt, nc, ny, nz]: [usize; 4] = b.shape().try_into().unwrap();
    let plane = ny * nz;
    let mut out = ComplexTensor::zeros(&[nt, ny, nz]);
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(j, dst)| {
            let mut tmp = vec![Complex64::default(); plane];
            for k in 0..nc {
                let src = &b.data()[(j * nc + k) * plane..(j * nc + k + 1) * plane];
                adjoint_plane_accumulate(src, coils.map(k), masks.slab(j), &mut tmp, dst, ny, nz);
            }
        });
    out
}

pub(crate) fn adjoint_plane_accumulate(
    ksp: &[Complex64],
    coil: &[Complex64],
    mask: &[f64],
    tmp: &mut [Complex64],
    dst: &mut [Complex64],
    ny: usize,
    nz: usize,
) {
    for ((t, &v), &u) in tmp.iter_mut().zip(ksp).zip(mask) {
        *t = v * u;
    }
    ifft2_centered_inplace(tmp, ny, nz);
    for ((d, &t), &e) in dst.iter_mut().zip(tmp.iter()).zip(coil) {
        *d += e.conj() * t;
    }
}

/// Per-component noise std giving `10 log10(mean |b|^2 / (2 sigma^2)) = snr_db`
/// over all entries of `b`.
pub fn noise_sigma_for_snr(b: &KSpaceData, snr_db: f64) -> f64 {
    let d = b.data().data();
    let power = d.iter().map(|c| c.norm_sqr()).sum::<f64>() / d.len() as f64;
    (power / (2.0 * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds i.i.d. complex Gaussian noise (std `sigma` per component) wherever
/// `masks` is non-zero. One draw pair is consumed per location in fixed
/// `(echo, coil, ky, kz)` order whether or not the location is sampled, so
/// the noise at a location does not depend on the mask.
pub fn add_noise(b: &KSpaceData, sigma: f64, seed: u64, masks: &RealTensor) -> Result<KSpaceData> {
    ensure(sigma >= 0.0, || "sigma must be >= 0".into())?;
    let (ny, nz) = b.dims();
    check_masks(masks, b.n_echoes(), ny, nz)?;
    if sigma == 0.0 {
        return Ok(b.clone());
    }
    let mut rng = Rng::new(seed);
    let mut out = b.data().clone();
    let plane = ny * nz;
    let nc = b.n_coils();
    for (idx, v) in out.data_mut().iter_mut().enumerate() {
        let n = Complex64::new(rng.normal(), rng.normal()) * sigma;
        let j = idx / (nc * plane);
        if masks.slab(j)[idx % plane] != 0.0 {
            *v += n;
        }
    }
    Ok(b.with_data(out))
}
