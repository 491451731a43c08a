use super::sampling::replicate;
use super::BinaryPattern;
use crate::error::{ensure, Result};
use crate::tensor::{RealTensor, Rng};

/// Concentric multi-level variable-density design.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManualVdConfig {
    pub n_levels: usize,
    /// Density ratio between adjacent outer levels.
    pub decay: f64,
}

impl Default for ManualVdConfig {
    fn default() -> Self {
        ManualVdConfig {
            n_levels: 5,
            decay: 0.5,
        }
    }
}

impl ManualVdConfig {
    /// Level index of every location: equal-width bands of the elliptical
    /// radius `sqrt((ky / (ny/2))^2 + (kz / (nz/2))^2)` over `[0, sqrt 2]`.
    pub fn levels(&self, ny: usize, nz: usize) -> Vec<usize> {
        let ry = (ny / 2).max(1) as f64;
        let rz = (nz / 2).max(1) as f64;
        let band = std::f64::consts::SQRT_2 / self.n_levels as f64;
        let mut out = Vec::with_capacity(ny * nz);
        for y in 0..ny {
            for z in 0..nz {
                let dy = (y as f64 - (ny / 2) as f64) / ry;
                let dz = (z as f64 - (nz / 2) as f64) / rz;
                let r = (dy * dy + dz * dz).sqrt();
                out.push(((r / band) as usize).min(self.n_levels - 1));
            }
        }
        out
    }

    /// Per-level sampling densities: level 0 is 1, outer levels follow
    /// `min(1, c * decay^(l-1))` with `c` solved so the expected sampled
    /// fraction equals `gamma`.
    pub fn densities(&self, ny: usize, nz: usize, gamma: f64) -> Result<Vec<f64>> {
        super::prob::check_gamma(gamma)?;
        ensure(self.n_levels >= 1, || "n_levels must be >= 1".into())?;
        ensure(self.decay > 0.0 && self.decay <= 1.0, || {
            "level decay must lie in (0, 1]".into()
        })?;
        let levels = self.levels(ny, nz);
        let mut counts = vec![0usize; self.n_levels];
        for &l in &levels {
            counts[l] += 1;
        }
        let total = (ny * nz) as f64;
        let target = gamma * total;
        ensure(counts[0] as f64 <= target + 1e-9, || {
            format!(
                "ratio {gamma} is infeasible: the fully sampled center alone covers {:.4}",
                counts[0] as f64 / total
            )
        })?;
        let expected = |c: f64| -> f64 {
            counts[0] as f64
                + (1..self.n_levels)
                    .map(|l| counts[l] as f64 * (c * self.decay.powi(l as i32 - 1)).min(1.0))
                    .sum::<f64>()
        };
        // expected(c) is continuous and non-decreasing; reaching every
        // location needs c = decay^-(L-2)
        let (mut lo, mut hi) = (0.0, self.decay.powi(-(self.n_levels as i32)).max(1.0));
        if expected(hi) < target - 1e-9 {
            return Err(crate::Error::invalid(format!("ratio {gamma} unreachable")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if expected(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = 0.5 * (lo + hi);
        Ok((0..self.n_levels)
            .map(|l| {
                if l == 0 {
                    1.0
                } else {
                    (c * self.decay.powi(l as i32 - 1)).min(1.0)
                }
            })
            .collect())
    }

    /// Per-location Bernoulli probabilities of the design.
    pub fn density_map(&self, ny: usize, nz: usize, gamma: f64) -> Result<RealTensor> {
        let d = self.densities(ny, nz, gamma)?;
        let data = self.levels(ny, nz).into_iter().map(|l| d[l]).collect();
        RealTensor::from_vec(&[ny, nz], data)
    }
}

/// The fixed baseline mask: one Bernoulli draw from the multi-level density,
/// replicated across all echoes.
pub fn manual_vd_pattern(
    n_echoes: usize,
    shape: [usize; 2],
    gamma: f64,
    cfg: ManualVdConfig,
    rng: &mut Rng,
) -> Result<BinaryPattern> {
    let [ny, nz] = shape;
    let density = cfg.density_map(ny, nz, gamma)?;
    let data = density
        .data()
        .iter()
        .map(|&d| if rng.uniform() < d { 1.0 } else { 0.0 })
        .collect();
    let slab = RealTensor::from_vec(&[1, ny, nz], data)?;
    Ok(BinaryPattern {
        u: replicate(&slab, n_echoes)?,
        calib_size: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_ratio_samples_everything() {
        let b = manual_vd_pattern(
            2,
            [20, 16],
            1.0,
            ManualVdConfig::default(),
            &mut Rng::new(1),
        )
        .unwrap();
        assert!(b.u.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn expected_ratio_is_gamma() {
        let cfg = ManualVdConfig::default();
        let (ny, nz) = (64, 64);
        for gamma in [0.125, 0.25] {
            let d = cfg.density_map(ny, nz, gamma).unwrap();
            assert!((d.mean() - gamma).abs() < 1e-9);
            let var: f64 = d.data().iter().map(|p| p * (1.0 - p)).sum();
            let n = (ny * nz) as f64;
            let seeds = 100;
            let mut total = 0.0;
            for s in 0..seeds {
                let b = manual_vd_pattern(1, [ny, nz], gamma, cfg, &mut Rng::new(s)).unwrap();
                total += b.sampling_rate();
            }
            let mean = total / seeds as f64;
            let se = var.sqrt() / n / (seeds as f64).sqrt();
            assert!((mean - gamma).abs() < 3.0 * se, "{gamma}: {mean} (se {se})");
        }
    }

    #[test]
    fn echoes_share_the_mask_and_center_is_full() {
        let cfg = ManualVdConfig::default();
        let b = manual_vd_pattern(4, [32, 24], 0.25, cfg, &mut Rng::new(3)).unwrap();
        for j in 1..4 {
            assert_eq!(b.u.slab(j), b.u.slab(0));
        }
        let levels = cfg.levels(32, 24);
        for (i, &l) in levels.iter().enumerate() {
            if l == 0 {
                assert_eq!(b.u.slab(0)[i], 1.0);
            }
        }
        let d = cfg.densities(32, 24, 0.25).unwrap();
        assert!(d.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn infeasible_ratio_is_rejected() {
        let cfg = ManualVdConfig::default();
        assert!(cfg.densities(64, 64, 0.01).is_err());
        assert!(cfg.densities(64, 64, 0.0).is_err());
    }
}
