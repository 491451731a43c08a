use super::PatternMode;
use crate::error::{ensure, Result};
use crate::tensor::RealTensor;

/// Learnable logits `w` (`[n_echoes, ny, nz]`), sigmoid slope and target
/// sampling ratio. In [`PatternMode::Shared`] every echo slab is identical.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternWeights {
    pub w: RealTensor,
    pub slope: f64,
    pub gamma: f64,
    pub mode: PatternMode,
}

/// Per-location Bernoulli probabilities `[n_echoes, ny, nz]`, each echo with
/// mean `gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbPattern {
    pub p: RealTensor,
}

impl PatternWeights {
    /// All-zero logits, i.e. a uniform pattern at ratio `gamma`.
    pub fn zeros(
        n_echoes: usize,
        ny: usize,
        nz: usize,
        slope: f64,
        gamma: f64,
        mode: PatternMode,
    ) -> Self {
        PatternWeights {
            w: RealTensor::zeros(&[n_echoes, ny, nz]),
            slope,
            gamma,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        ensure(self.slope > 0.0, || "sigmoid slope must be positive".into())?;
        ensure(self.w.ndim() == 3, || {
            format!("pattern weights must be 3-d, got {:?}", self.w.shape())
        })?;
        if self.mode == PatternMode::Shared {
            let first = self.w.slab(0);
            ensure(
                (1..self.w.shape()[0]).all(|j| self.w.slab(j) == first),
                || "shared-mode weights must be identical across echoes".into(),
            )?;
        }
        Ok(())
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    ensure(gamma > 0.0 && gamma <= 1.0, || {
        format!("sampling ratio must lie in (0, 1], got {gamma}")
    })
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Linear rescaling of `sig` (values in `[0, 1]`) to mean `gamma`: scale
/// down toward zero when the mean is too high, scale the complement when it
/// is too low. Both branches keep values inside `[0, 1]`.
pub fn renorm(sig: &[f64], gamma: f64) -> Vec<f64> {
    let mean = sig.iter().sum::<f64>() / sig.len() as f64;
    if mean >= gamma {
        let k = gamma / mean;
        sig.iter().map(|&s| (s * k).clamp(0.0, 1.0)).collect()
    } else {
        let k = (1.0 - gamma) / (1.0 - mean);
        sig.iter()
            .map(|&s| (1.0 - (1.0 - s) * k).clamp(0.0, 1.0))
            .collect()
    }
}

/// Vector-Jacobian product of [`renorm`], including the dependence of the
/// scale factor on the mean of `sig`.
pub fn renorm_vjp(sig: &[f64], gamma: f64, grad_out: &[f64]) -> Vec<f64> {
    let n = sig.len() as f64;
    let mean = sig.iter().sum::<f64>() / n;
    if mean >= gamma {
        // P_i = s_i * gamma / m
        let k = gamma / mean;
        let gs: f64 = grad_out.iter().zip(sig).map(|(g, s)| g * s).sum();
        let shared = gs * gamma / (mean * mean * n);
        grad_out.iter().map(|&g| g * k - shared).collect()
    } else {
        // P_i = 1 - (1 - s_i) (1 - gamma) / (1 - m)
        let k = (1.0 - gamma) / (1.0 - mean);
        let gc: f64 = grad_out.iter().zip(sig).map(|(g, s)| g * (1.0 - s)).sum();
        let shared = gc * (1.0 - gamma) / ((1.0 - mean) * (1.0 - mean) * n);
        grad_out.iter().map(|&g| g * k - shared).collect()
    }
}

pub fn build_prob_pattern(weights: &PatternWeights) -> Result<ProbPattern> {
    weights.validate()?;
    let nt = weights.w.shape()[0];
    let mut data = Vec::with_capacity(weights.w.len());
    for j in 0..nt {
        let sig: Vec<f64> = weights
            .w
            .slab(j)
            .iter()
            .map(|&w| sigmoid(weights.slope * w))
            .collect();
        data.extend(renorm(&sig, weights.gamma));
    }
    Ok(ProbPattern {
        p: RealTensor::from_vec(weights.w.shape(), data)?,
    })
}

/// Straight-through gradient: the binarization is treated as the identity,
/// so `dL/dw = J_P(w)^T dL/dU` with `J_P` the Jacobian of
/// [`build_prob_pattern`]. In shared mode the per-echo contributions are
/// summed and written to every slab.
pub fn straight_through_grad(dl_du: &RealTensor, weights: &PatternWeights) -> Result<RealTensor> {
    weights.validate()?;
    ensure(dl_du.shape() == weights.w.shape(), || {
        format!(
            "gradient {:?} does not match weights {:?}",
            dl_du.shape(),
            weights.w.shape()
        )
    })?;
    let nt = weights.w.shape()[0];
    let a = weights.slope;
    let mut out = RealTensor::zeros(weights.w.shape());
    for j in 0..nt {
        let sig: Vec<f64> = weights.w.slab(j).iter().map(|&w| sigmoid(a * w)).collect();
        let g_sig = renorm_vjp(&sig, weights.gamma, dl_du.slab(j));
        for ((o, g), s) in out.slab_mut(j).iter_mut().zip(g_sig).zip(&sig) {
            *o = g * a * s * (1.0 - s);
        }
    }
    if weights.mode == PatternMode::Shared && nt > 1 {
        let n = out.slab_len();
        let mut total = vec![0.0; n];
        for j in 0..nt {
            for (t, g) in total.iter_mut().zip(out.slab(j)) {
                *t += g;
            }
        }
        for j in 0..nt {
            out.slab_mut(j).copy_from_slice(&total);
        }
    }
    Ok(out)
}
