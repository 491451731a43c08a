use super::{PatternMode, ProbPattern};
use crate::error::{ensure, Result};
use crate::tensor::{RealTensor, Rng};

/// 0/1 masks `[n_echoes, ny, nz]` with an always-on central
/// `calib_size x calib_size` block.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryPattern {
    pub u: RealTensor,
    pub calib_size: usize,
}

impl BinaryPattern {
    pub fn n_echoes(&self) -> usize {
        self.u.shape()[0]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.u.shape()[1], self.u.shape()[2])
    }

    /// Fraction of sampled locations over all echoes.
    pub fn sampling_rate(&self) -> f64 {
        self.u.mean()
    }

    pub fn count(&self, echo: usize) -> usize {
        self.u.slab(echo).iter().filter(|&&v| v != 0.0).count()
    }
}

/// Half-open index range `[n/2 - c/2, n/2 - c/2 + c)` of the calibration
/// block along an axis of length `n`.
pub fn calib_block(n: usize, c: usize) -> Result<std::ops::Range<usize>> {
    ensure(c <= n, || {
        format!("calibration size {c} exceeds grid extent {n}")
    })?;
    let start = n / 2 - c / 2;
    Ok(start..start + c)
}

pub(crate) fn calib_flags(ny: usize, nz: usize, c: usize) -> Result<Vec<bool>> {
    let ry = calib_block(ny, c)?;
    let rz = calib_block(nz, c)?;
    let mut flags = vec![false; ny * nz];
    for y in ry {
        for z in rz.clone() {
            flags[y * nz + z] = true;
        }
    }
    Ok(flags)
}

/// Independent Bernoulli draw `U = 1[z < P]` per location and echo, then
/// the calibration block is forced on. Uniforms are consumed in row-major
/// order over the whole tensor.
pub fn sample_binary(p: &ProbPattern, rng: &mut Rng, calib_size: usize) -> Result<BinaryPattern> {
    let shape = p.p.shape();
    ensure(shape.len() == 3, || {
        "probability pattern must be 3-d".into()
    })?;
    let flags = calib_flags(shape[1], shape[2], calib_size)?;
    let n = flags.len();
    let data =
        p.p.data()
            .iter()
            .enumerate()
            .map(|(i, &prob)| {
                let z = rng.uniform();
                if flags[i % n] || z < prob {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
    Ok(BinaryPattern {
        u: RealTensor::from_vec(shape, data)?,
        calib_size,
    })
}

/// Mode-aware draw: in shared (and manual) mode one mask is drawn from the
/// first echo's probabilities and replicated across echoes.
pub fn sample_pattern(
    p: &ProbPattern,
    mode: PatternMode,
    rng: &mut Rng,
    calib_size: usize,
) -> Result<BinaryPattern> {
    if mode == PatternMode::PerEcho {
        return sample_binary(p, rng, calib_size);
    }
    let shape = p.p.shape().to_vec();
    let first = ProbPattern {
        p: RealTensor::from_vec(&[1, shape[1], shape[2]], p.p.slab(0).to_vec())?,
    };
    let one = sample_binary(&first, rng, calib_size)?;
    Ok(BinaryPattern {
        u: replicate(&one.u, shape[0])?,
        calib_size,
    })
}

pub(crate) fn replicate(slab: &RealTensor, n_echoes: usize) -> Result<RealTensor> {
    let shape = slab.shape();
    let mut data = Vec::with_capacity(slab.len() * n_echoes);
    for _ in 0..n_echoes {
        data.extend_from_slice(slab.data());
    }
    RealTensor::from_vec(&[n_echoes, shape[1], shape[2]], data)
}

/// Exactly `count` sampled locations per echo (calibration block included),
/// drawn without replacement with inclusion weights `P` by the
/// Efraimidis-Spirakis key `ln(z) / P`.
pub fn sample_fixed_count(
    p: &ProbPattern,
    count: usize,
    rng: &mut Rng,
    calib_size: usize,
) -> Result<BinaryPattern> {
    let shape = p.p.shape().to_vec();
    let (nt, ny, nz) = (shape[0], shape[1], shape[2]);
    let flags = calib_flags(ny, nz, calib_size)?;
    let n_calib = flags.iter().filter(|&&f| f).count();
    ensure(count >= n_calib && count <= ny * nz, || {
        format!("count {count} must lie in [{n_calib}, {}]", ny * nz)
    })?;
    let mut u = RealTensor::zeros(&shape);
    for j in 0..nt {
        let probs = p.p.slab(j);
        let mut keys: Vec<(f64, usize)> = probs
            .iter()
            .enumerate()
            .map(|(i, &pr)| {
                let z = rng.uniform();
                let key = if flags[i] {
                    f64::INFINITY
                } else if pr > 0.0 {
                    // z in [0, 1): use 1 - z so ln stays finite
                    (1.0 - z).ln() / pr
                } else {
                    f64::NEG_INFINITY
                };
                (key, i)
            })
            .collect();
        keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let slab = u.slab_mut(j);
        for &(_, i) in keys.iter().take(count) {
            slab[i] = 1.0;
        }
    }
    Ok(BinaryPattern { u, calib_size })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(shape: &[usize], v: f64) -> ProbPattern {
        ProbPattern {
            p: RealTensor::full(shape, v),
        }
    }

    #[test]
    fn certain_and_impossible_events() {
        let mut rng = Rng::new(0);
        let ones = sample_binary(&constant(&[2, 5, 6], 1.0), &mut rng, 0).unwrap();
        assert!(ones.u.data().iter().all(|&v| v == 1.0));
        let zeros = sample_binary(&constant(&[2, 5, 6], 0.0), &mut rng, 0).unwrap();
        assert!(zeros.u.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn calibration_block_is_forced_on() {
        let mut rng = Rng::new(0);
        let b = sample_binary(&constant(&[1, 8, 7], 0.0), &mut rng, 4).unwrap();
        let ry = calib_block(8, 4).unwrap();
        let rz = calib_block(7, 4).unwrap();
        assert_eq!(ry, 2..6);
        assert_eq!(rz, 1..5);
        for y in 0..8 {
            for z in 0..7 {
                let on = ry.contains(&y) && rz.contains(&z);
                assert_eq!(b.u.data()[y * 7 + z], if on { 1.0 } else { 0.0 });
            }
        }
        assert!(sample_binary(&constant(&[1, 8, 7], 0.5), &mut rng, 8).is_err());
    }

    #[test]
    fn realized_rate_within_three_standard_errors() {
        let p = constant(&[1, 206, 80], 0.125);
        let n = 206.0 * 80.0;
        let seeds = 1000;
        let mut total = 0.0;
        for seed in 0..seeds {
            let b = sample_binary(&p, &mut Rng::new(seed), 0).unwrap();
            total += b.sampling_rate();
        }
        let mean = total / seeds as f64;
        let se = (0.125 * 0.875 / (n * seeds as f64)).sqrt();
        assert!((mean - 0.125).abs() < 3.0 * se, "{mean} vs se {se}");
    }

    #[test]
    fn per_echo_draws_differ_and_are_reproducible() {
        let p = constant(&[3, 16, 16], 0.3);
        let a = sample_binary(&p, &mut Rng::new(9), 0).unwrap();
        let b = sample_binary(&p, &mut Rng::new(9), 0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.u.slab(0), a.u.slab(1));
        let shared = sample_pattern(&p, PatternMode::Shared, &mut Rng::new(9), 2).unwrap();
        assert_eq!(shared.u.slab(0), shared.u.slab(2));
    }

    #[test]
    fn fixed_count_is_exact() {
        let p = constant(&[4, 20, 12], 0.25);
        let b = sample_fixed_count(&p, 61, &mut Rng::new(3), 4).unwrap();
        for j in 0..4 {
            assert_eq!(b.count(j), 61);
        }
        assert_ne!(b.u.slab(0), b.u.slab(1));
        assert!(sample_fixed_count(&p, 3, &mut Rng::new(3), 4).is_err());
    }
}
