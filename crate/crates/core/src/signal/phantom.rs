use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::MultiEchoImage;
use crate::error::{ensure, Result};
use crate::tensor::{ComplexTensor, RealTensor, Rng};

/// One constant-tissue ellipse. Geometry is in normalized coordinates where
/// the grid spans `[-1, 1)` along both axes and `(0, 0)` is the k-space
/// center pixel `(ny / 2, nz / 2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    /// Degrees, counter-clockwise from the y axis.
    #[serde(default)]
    pub rotation: f64,
    pub m0: f64,
    /// 1/s
    pub r2star: f64,
    /// Off-resonance in Hz.
    #[serde(default)]
    pub field: f64,
    /// Radians.
    #[serde(default)]
    pub phase0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: [usize; 2],
    pub ellipses: Vec<Ellipse>,
    #[serde(default)]
    pub noise_sigma: f64,
}

/// The on-disk phantom description: a [`PhantomSpec`] plus echo times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomDocument {
    pub echo_times: Vec<f64>,
    #[serde(flatten)]
    pub spec: PhantomSpec,
}

/// Ground-truth parameter maps, each `[ny, nz]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TissueMaps {
    pub m0: RealTensor,
    pub r2star: RealTensor,
    pub field: RealTensor,
    pub phase0: RealTensor,
    /// Index+1 of the ellipse owning each pixel, 0 for background.
    pub label: Vec<usize>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        ensure(self.shape[0] >= 1 && self.shape[1] >= 1, || {
            "phantom shape must be positive".into()
        })?;
        ensure(!self.ellipses.is_empty(), || {
            "phantom has no ellipses".into()
        })?;
        ensure(self.noise_sigma >= 0.0, || {
            "noise_sigma must be >= 0".into()
        })?;
        for (i, e) in self.ellipses.iter().enumerate() {
            ensure(e.m0 >= 0.0, || format!("ellipse {i}: m0 < 0"))?;
            ensure(e.r2star >= 0.0, || format!("ellipse {i}: r2star < 0"))?;
            ensure(e.axes[0] > 0.0 && e.axes[1] > 0.0, || {
                format!("ellipse {i}: axes must be positive")
            })?;
        }
        Ok(())
    }

    /// Modified Shepp-Logan geometry with gradient-echo tissue parameters.
    pub fn shepp_logan(shape: [usize; 2]) -> Self {
        // (center, axes, rotation, m0, r2*, field, phase0)
        #[rustfmt::skip]
        let table: [([f64; 2], [f64; 2], f64, f64, f64, f64, f64); 10] = [
            ([0.0, 0.0],       [0.92, 0.69],    0.0,  0.85, 55.0,  0.0, 0.3),
            ([-0.0184, 0.0],   [0.874, 0.6624], 0.0,  0.55, 22.0,  2.0, 0.3),
            ([0.0, 0.22],      [0.31, 0.11],  -18.0,  1.00,  6.0, -4.0, 0.3),
            ([0.0, -0.22],     [0.41, 0.16],   18.0,  1.00,  6.0, -4.0, 0.3),
            ([0.35, 0.0],      [0.25, 0.21],    0.0,  0.70, 30.0,  9.0, 0.3),
            ([0.1, 0.0],       [0.046, 0.046],  0.0,  0.45, 48.0, 18.0, 0.3),
            ([-0.1, 0.0],      [0.046, 0.046],  0.0,  0.45, 48.0, 18.0, 0.3),
            ([-0.605, -0.08],  [0.023, 0.046],  0.0,  0.80, 35.0, -9.0, 0.3),
            ([-0.606, 0.0],    [0.023, 0.023],  0.0,  0.80, 35.0, -9.0, 0.3),
            ([-0.605, 0.06],   [0.046, 0.023],  0.0,  0.80, 35.0, -9.0, 0.3),
        ];
        let ellipses = table
            .iter()
            .map(
                |&(center, axes, rotation, m0, r2star, field, phase0)| Ellipse {
                    center,
                    axes,
                    rotation,
                    m0,
                    r2star,
                    field,
                    phase0,
                },
            )
            .collect();
        PhantomSpec {
            shape,
            ellipses,
            noise_sigma: 0.0,
        }
    }

    /// A randomly perturbed Shepp-Logan with a few extra lesion-like blobs,
    /// used to build synthetic training and test sets.
    pub fn random(shape: [usize; 2], rng: &mut Rng) -> Self {
        let mut spec = Self::shepp_logan(shape);
        let global_rot = rng.uniform_range(-12.0, 12.0);
        let scale = rng.uniform_range(0.85, 1.05);
        let shift = [
            rng.uniform_range(-0.05, 0.05),
            rng.uniform_range(-0.05, 0.05),
        ];
        let (s, c) = global_rot.to_radians().sin_cos();
        for e in &mut spec.ellipses {
            let [y, z] = e.center;
            e.center = [
                scale * (c * y - s * z) + shift[0] + rng.uniform_range(-0.02, 0.02),
                scale * (s * y + c * z) + shift[1] + rng.uniform_range(-0.02, 0.02),
            ];
            e.axes = [
                e.axes[0] * scale * rng.uniform_range(0.9, 1.1),
                e.axes[1] * scale * rng.uniform_range(0.9, 1.1),
            ];
            e.rotation += global_rot + rng.uniform_range(-5.0, 5.0);
            e.m0 *= rng.uniform_range(0.85, 1.15);
            e.r2star *= rng.uniform_range(0.8, 1.2);
            e.field += rng.uniform_range(-4.0, 4.0);
        }
        let phase0 = rng.uniform_range(-1.0, 1.0);
        for e in &mut spec.ellipses {
            e.phase0 = phase0;
        }
        let extra = 2 + rng.below(4);
        for _ in 0..extra {
            let r = rng.uniform_range(0.0, 0.45);
            let t = rng.uniform_range(0.0, std::f64::consts::TAU);
            spec.ellipses.push(Ellipse {
                center: [
                    shift[0] + scale * r * t.cos() * 0.9,
                    shift[1] + scale * r * t.sin() * 0.7,
                ],
                axes: [rng.uniform_range(0.03, 0.12), rng.uniform_range(0.03, 0.12)],
                rotation: rng.uniform_range(0.0, 180.0),
                m0: rng.uniform_range(0.3, 0.95),
                r2star: rng.uniform_range(10.0, 70.0),
                field: rng.uniform_range(-25.0, 25.0),
                phase0,
            });
        }
        spec
    }
}

impl Ellipse {
    fn contains(&self, y: f64, z: f64) -> bool {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let dy = y - self.center[0];
        let dz = z - self.center[1];
        let u = (c * dy + s * dz) / self.axes[0];
        let v = (-s * dy + c * dz) / self.axes[1];
        u * u + v * v <= 1.0
    }
}

/// Normalized coordinate of grid index `i` on an axis of length `n`.
pub(crate) fn norm_coord(i: usize, n: usize) -> f64 {
    let half = (n / 2).max(1) as f64;
    (i as f64 - (n / 2) as f64) / half
}

/// Renders `s_j = m0 exp(-R2* TE_j) exp(i (2 pi f TE_j + phase0))`. Later
/// ellipses overwrite earlier ones.
pub fn generate_phantom(
    spec: &PhantomSpec,
    echo_times: &[f64],
) -> Result<(MultiEchoImage, TissueMaps)> {
    spec.validate()?;
    super::validate_echo_times(echo_times)?;
    let [ny, nz] = spec.shape;
    let n = ny * nz;
    let mut label = vec![0usize; n];
    for iy in 0..ny {
        let y = norm_coord(iy, ny);
        for iz in 0..nz {
            let z = norm_coord(iz, nz);
            for (e_idx, e) in spec.ellipses.iter().enumerate() {
                if e.contains(y, z) {
                    label[iy * nz + iz] = e_idx + 1;
                }
            }
        }
    }
    let pick = |f: &dyn Fn(&Ellipse) -> f64| {
        let data = label
            .iter()
            .map(|&l| {
                if l == 0 {
                    0.0
                } else {
                    f(&spec.ellipses[l - 1])
                }
            })
            .collect();
        RealTensor::from_vec(&[ny, nz], data).unwrap()
    };
    let maps = TissueMaps {
        m0: pick(&|e| e.m0),
        r2star: pick(&|e| e.r2star),
        field: pick(&|e| e.field),
        phase0: pick(&|e| e.phase0),
        label,
    };
    let nt = echo_times.len();
    let mut data = ComplexTensor::zeros(&[nt, ny, nz]);
    for (j, &te) in echo_times.iter().enumerate() {
        let slab = data.slab_mut(j);
        for p in 0..n {
            let m0 = maps.m0.data()[p];
            if m0 == 0.0 {
                continue;
            }
            let mag = m0 * (-maps.r2star.data()[p] * te).exp();
            let phase =
                2.0 * std::f64::consts::PI * maps.field.data()[p] * te + maps.phase0.data()[p];
            slab[p] = Complex64::from_polar(mag, phase);
        }
    }
    Ok((MultiEchoImage::new(data, echo_times.to_vec())?, maps))
}
