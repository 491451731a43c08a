//! Unrolled plug-and-play ADMM.
//!
//! With `A_j = U_j F E` the per-echo encoding operator, each of the `N_l`
//! iterations runs
//!
//! ```text
//! s   = argmin ||A s - b||^2 + (rho/2) ||s - v||^2 + <u, s>-style coupling  (CG)
//! v~  = s + u / rho
//! v   = D(v~)
//! u  += rho (s - v)
//! ```
//!
//! and the result is the last `v`. `D` is the identity, locally low-rank
//! shrinkage or the recurrent convolutional denoiser.

mod cg;
pub mod conv;
mod llr;
mod tff;

pub use cg::data_consistency_cg;
pub(crate) use cg::{check_finite, dc_rhs, safe_div, solve_normal};
pub use llr::{llr_denoise, soft_threshold_singular_values};
pub use tff::{tff_ablated_forward, tff_forward, ConvLayer, TffArch, TffVariant, TffWeights};

use crate::error::{ensure, Result};
use crate::signal::{adjoint, CoilSet, KSpaceData, MultiEchoImage};
use crate::tensor::{ComplexTensor, RealTensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Denoiser {
    Identity,
    Llr { patch: usize, lambda: f64 },
    Tff(TffWeights),
    TffAblated(TffWeights),
}

impl Denoiser {
    pub fn apply(&self, x: &MultiEchoImage) -> Result<MultiEchoImage> {
        match self {
            Denoiser::Identity => Ok(x.clone()),
            Denoiser::Llr { patch, lambda } => llr_denoise(x, *patch, *lambda),
            Denoiser::Tff(w) => tff_forward(x, w),
            Denoiser::TffAblated(w) => tff_ablated_forward(x, w),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Denoiser::Identity => "identity",
            Denoiser::Llr { .. } => "llr",
            Denoiser::Tff(_) => "tff",
            Denoiser::TffAblated(_) => "tff-ablated",
        }
    }

    /// Network weights and the variant they run in, if any.
    pub fn network(&self) -> Option<(&TffWeights, TffVariant)> {
        match self {
            Denoiser::Tff(w) => Some((w, TffVariant::Recurrent)),
            Denoiser::TffAblated(w) => Some((w, TffVariant::Ablated)),
            _ => None,
        }
    }

    pub fn from_network(weights: TffWeights, variant: TffVariant) -> Self {
        match variant {
            TffVariant::Recurrent => Denoiser::Tff(weights),
            TffVariant::Ablated => Denoiser::TffAblated(weights),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmConfig {
    pub n_unrolled: usize,
    pub rho: f64,
    pub cg_iters: usize,
    pub denoiser: Denoiser,
}

impl AdmmConfig {
    /// Ten unrolled iterations of ten CG steps at `rho = 1`.
    pub fn new(denoiser: Denoiser) -> Self {
        AdmmConfig {
            n_unrolled: 10,
            rho: 1.0,
            cg_iters: 10,
            denoiser,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.n_unrolled >= 1, || "n_unrolled must be >= 1".into())?;
        ensure(self.cg_iters >= 1, || "cg_iters must be >= 1".into())?;
        ensure(self.rho > 0.0 && self.rho.is_finite(), || {
            format!("rho must be positive, got {}", self.rho)
        })
    }
}

/// `A^H b`: masked, inverse-transformed and coil-combined data. This is the
/// starting point `s = v` of the iteration, with `u = 0`.
pub fn zero_filled_init(
    b: &KSpaceData,
    coils: &CoilSet,
    masks: &RealTensor,
) -> Result<MultiEchoImage> {
    adjoint(b, coils, masks)
}

pub fn admm_reconstruct(
    b: &KSpaceData,
    coils: &CoilSet,
    masks: &RealTensor,
    cfg: &AdmmConfig,
) -> Result<MultiEchoImage> {
    cfg.validate()?;
    check_finite("k-space data", b.data().data())?;
    let atb = zero_filled_init(b, coils, masks)?;
    let rho = cfg.rho;
    let mut v = atb.clone();
    let mut u = ComplexTensor::zeros(atb.data().shape());
    for _ in 0..cfg.n_unrolled {
        let rhs = dc_rhs(atb.data(), v.data(), &u, rho);
        let s = solve_normal(&rhs, coils, masks, rho, cfg.cg_iters);
        let vt = s
            .data()
            .iter()
            .zip(u.data())
            .map(|(&a, &b)| a + b * (1.0 / rho))
            .collect();
        let vt = atb.with_data(ComplexTensor::from_vec(s.shape(), vt)?)?;
        v = cfg.denoiser.apply(&vt)?;
        for ((ui, &si), &vi) in u.data_mut().iter_mut().zip(s.data()).zip(v.data().data()) {
            *ui += (si - vi) * rho;
        }
    }
    check_finite("reconstruction", v.data().data())?;
    Ok(v)
}
