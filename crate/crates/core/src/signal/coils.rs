use num_complex::Complex64;

use super::phantom::norm_coord;
use crate::error::{ensure, Result};
use crate::tensor::{ComplexTensor, Rng};

/// Receive sensitivities `[n_coils, ny, nz]`, root-sum-of-squares
/// normalized to one at every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSet {
    maps: ComplexTensor,
}

impl CoilSet {
    pub fn new(maps: ComplexTensor) -> Result<Self> {
        ensure(maps.ndim() == 3, || {
            format!("coil maps must be 3-d, got {:?}", maps.shape())
        })?;
        Ok(CoilSet { maps })
    }

    /// Single coil with unit sensitivity.
    pub fn unit(ny: usize, nz: usize) -> Self {
        CoilSet {
            maps: ComplexTensor::full(&[1, ny, nz], Complex64::new(1.0, 0.0)),
        }
    }

    pub fn maps(&self) -> &ComplexTensor {
        &self.maps
    }

    pub fn n_coils(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.maps.shape()[1], self.maps.shape()[2])
    }

    pub fn map(&self, k: usize) -> &[Complex64] {
        self.maps.slab(k)
    }

    /// Largest deviation of `sum_k |E_k|^2` from one.
    pub fn sos_error(&self) -> f64 {
        let (ny, nz) = self.dims();
        (0..ny * nz)
            .map(|p| {
                let s: f64 = (0..self.n_coils()).map(|k| self.map(k)[p].norm_sqr()).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Gaussian-bump magnitudes arranged around the field of view with smooth
/// polynomial phase, normalized so `sum_k |E_k|^2 == 1` voxelwise.
pub fn generate_coils(n_coils: usize, shape: [usize; 2], seed: u64) -> Result<CoilSet> {
    ensure(n_coils >= 1, || "n_coils must be >= 1".into())?;
    let [ny, nz] = shape;
    let mut rng = Rng::new(seed);
    let mut maps = ComplexTensor::zeros(&[n_coils, ny, nz]);
    let offset = rng.uniform_range(0.0, std::f64::consts::TAU);
    for k in 0..n_coils {
        let angle = offset
            + std::f64::consts::TAU * k as f64 / n_coils as f64
            + rng.uniform_range(-0.2, 0.2);
        let radius = rng.uniform_range(0.9, 1.3);
        let (cy, cz) = (radius * angle.cos(), radius * angle.sin());
        let width = rng.uniform_range(0.7, 1.1);
        let poly: [f64; 6] = std::array::from_fn(|_| rng.uniform_range(-1.0, 1.0));
        let slab = maps.slab_mut(k);
        for iy in 0..ny {
            let y = norm_coord(iy, ny);
            for iz in 0..nz {
                let z = norm_coord(iz, nz);
                let d2 = (y - cy).powi(2) + (z - cz).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phase = poly[0] * std::f64::consts::PI
                    + poly[1] * y
                    + poly[2] * z
                    + 0.5 * (poly[3] * y * y + poly[4] * z * z + poly[5] * y * z);
                slab[iy * nz + iz] = Complex64::from_polar(mag, phase);
            }
        }
    }
    for p in 0..ny * nz {
        let sos: f64 = (0..n_coils)
            .map(|k| maps.slab(k)[p].norm_sqr())
            .sum::<f64>()
            .sqrt();
        for k in 0..n_coils {
            maps.slab_mut(k)[p] /= sos;
        }
    }
    CoilSet::new(maps)
}
