//! Quantitative maps from multi-echo images and image-quality metrics.

mod export;
mod metrics;

pub use export::{metrics_csv, metrics_json, pgm_bytes, write_pgm};
pub use metrics::{
    compute_metrics, hfen, log_kernel, psnr, rmse, roi_stats, sharpness, MetricReport, NamedMetrics,
};

use std::f64::consts::PI;

use crate::error::{ensure, Result};
use crate::signal::MultiEchoImage;
use crate::tensor::RealTensor;

/// Inter-echo phase steps at or beyond this magnitude mark a voxel as
/// possibly wrapped.
pub const WRAP_GUARD: f64 = 0.95 * PI;

/// A fitted parameter map with its validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FitMap {
    pub values: RealTensor,
    pub valid: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantMaps {
    pub magnitude: RealTensor,
    /// 1/s
    pub r2star: FitMap,
    /// Hz
    pub field: FitMap,
}

/// Voxelwise `sqrt(sum_j |s_j|^2)`.
pub fn echo_combine(x: &MultiEchoImage) -> RealTensor {
    let (ny, nz) = x.dims();
    let mut out = vec![0.0; ny * nz];
    for j in 0..x.n_echoes() {
        for (o, s) in out.iter_mut().zip(x.data().slab(j)) {
            *o += s.norm_sqr();
        }
    }
    RealTensor::from_vec(&[ny, nz], out.into_iter().map(f64::sqrt).collect()).unwrap()
}

fn check_fit_input(x: &MultiEchoImage, threshold: f64) -> Result<()> {
    ensure(x.n_echoes() >= 2, || "fits need at least 2 echoes".into())?;
    ensure((0.0..=1.0).contains(&threshold), || {
        format!("threshold must lie in [0, 1], got {threshold}")
    })
}

/// Voxels whose first-echo magnitude exceeds `threshold` times its maximum.
fn signal_mask(x: &MultiEchoImage, threshold: f64) -> Vec<bool> {
    let first = x.data().slab(0);
    let peak = first.iter().map(|c| c.norm()).fold(0.0, f64::max);
    first
        .iter()
        .map(|c| c.norm() > 0.0 && c.norm() > threshold * peak)
        .collect()
}

/// Least-squares slope of `y` against `t` with weights `w`.
fn weighted_slope(t: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let tm = t.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&ti, &yi), &wi) in t.iter().zip(y).zip(w) {
        num += wi * (ti - tm) * (yi - ym);
        den += wi * (ti - tm) * (ti - tm);
    }
    num / den
}

/// R2* as the unweighted least-squares slope of `-ln |s_j|` against TE,
/// clamped at zero. Invalid voxels hold 0.
pub fn fit_r2star(x: &MultiEchoImage, threshold: f64) -> Result<FitMap> {
    check_fit_input(x, threshold)?;
    let (ny, nz) = x.dims();
    let nt = x.n_echoes();
    let tes = x.echo_times();
    let ones = vec![1.0; nt];
    let mut valid = signal_mask(x, threshold);
    let mut values = vec![0.0; ny * nz];
    for p in 0..ny * nz {
        if !valid[p] {
            continue;
        }
        let y: Vec<f64> = (0..nt).map(|j| -x.data().slab(j)[p].norm().ln()).collect();
        if y.iter().any(|v| !v.is_finite()) {
            valid[p] = false;
            continue;
        }
        values[p] = weighted_slope(tes, &y, &ones).max(0.0);
    }
    Ok(FitMap {
        values: RealTensor::from_vec(&[ny, nz], values)?,
        valid,
    })
}

/// Field in Hz from the magnitude-weighted least-squares slope of the
/// accumulated inter-echo phase differences. Voxels with a phase step of at
/// least [`WRAP_GUARD`] are marked invalid but keep their (wrapped) value.
pub fn fit_field(x: &MultiEchoImage, threshold: f64) -> Result<FitMap> {
    check_fit_input(x, threshold)?;
    let (ny, nz) = x.dims();
    let nt = x.n_echoes();
    let tes = x.echo_times();
    let mut valid = signal_mask(x, threshold);
    let mut values = vec![0.0; ny * nz];
    for p in 0..ny * nz {
        if !valid[p] {
            continue;
        }
        let s: Vec<_> = (0..nt).map(|j| x.data().slab(j)[p]).collect();
        let mut phase = vec![0.0; nt];
        let mut wrapped = false;
        for j in 1..nt {
            let step = (s[j] * s[j - 1].conj()).arg();
            wrapped |= step.abs() >= WRAP_GUARD;
            phase[j] = phase[j - 1] + step;
        }
        let w: Vec<f64> = s.iter().map(|c| c.norm()).collect();
        values[p] = weighted_slope(tes, &phase, &w) / (2.0 * PI);
        valid[p] = !wrapped;
    }
    Ok(FitMap {
        values: RealTensor::from_vec(&[ny, nz], values)?,
        valid,
    })
}

pub fn quant_maps(x: &MultiEchoImage, threshold: f64) -> Result<QuantMaps> {
    Ok(QuantMaps {
        magnitude: echo_combine(x),
        r2star: fit_r2star(x, threshold)?,
        field: fit_field(x, threshold)?,
    })
}
