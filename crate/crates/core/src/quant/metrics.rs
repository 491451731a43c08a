use serde::{Serialize, Serializer};

use crate::error::{ensure, Result};
use crate::learn::{ssim_map, SsimParams};
use crate::recon::conv::{conv2d, ConvShape};
use crate::tensor::RealTensor;

/// Image-quality figures of `x` against a reference. `rmse` and `hfen` are
/// percentages; `psnr` is `+inf` for identical images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(serialize_with = "finite_or_string")]
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
    pub hfen: f64,
}

/// A report for one map (`magnitude`, `r2star`, ...).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NamedMetrics {
    pub name: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

fn finite_or_string<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

fn check_pair(x: &RealTensor, r: &RealTensor) -> Result<()> {
    ensure(x.shape() == r.shape(), || {
        format!("shapes differ: {:?} vs {:?}", x.shape(), r.shape())
    })?;
    ensure(r.data().iter().any(|&v| v != 0.0), || {
        "reference image is identically zero".into()
    })
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|d| d * d).sum::<f64>().sqrt()
}

/// `20 log10(max(ref) / rms(x - ref))`.
pub fn psnr(x: &RealTensor, r: &RealTensor) -> Result<f64> {
    check_pair(x, r)?;
    let mse = x
        .data()
        .iter()
        .zip(r.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (r.max() / mse.sqrt()).log10())
}

/// `100 ||x - ref|| / ||ref||`.
pub fn rmse(x: &RealTensor, r: &RealTensor) -> Result<f64> {
    check_pair(x, r)?;
    Ok(
        100.0 * l2(x.data().iter().zip(r.data()).map(|(a, b)| a - b))
            / l2(r.data().iter().copied()),
    )
}

/// Laplacian-of-Gaussian kernel, `size x size`, zero-sum, built like the
/// common `fspecial('log', ...)` recipe.
pub fn log_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let coords: Vec<(f64, f64)> = (0..size * size)
        .map(|i| ((i / size) as f64 - half, (i % size) as f64 - half))
        .collect();
    let mut h: Vec<f64> = coords
        .iter()
        .map(|(x, y)| (-(x * x + y * y) / (2.0 * sigma * sigma)).exp())
        .collect();
    let peak = h.iter().copied().fold(0.0, f64::max);
    for v in &mut h {
        if *v < f64::EPSILON * peak {
            *v = 0.0;
        }
    }
    let sum: f64 = h.iter().sum();
    let h1: Vec<f64> = h
        .iter()
        .zip(&coords)
        .map(|(v, (x, y))| v / sum * (x * x + y * y - 2.0 * sigma * sigma) / sigma.powi(4))
        .collect();
    let mean = h1.iter().sum::<f64>() / h1.len() as f64;
    h1.into_iter().map(|v| v - mean).collect()
}

pub(crate) fn log_filter(x: &RealTensor) -> Vec<f64> {
    let shape = ConvShape {
        n: 1,
        c_in: 1,
        c_out: 1,
        h: x.shape()[0],
        w: x.shape()[1],
        k: 15,
    };
    conv2d(x.data(), &log_kernel(15, 1.5), &[0.0], shape)
}

/// `100 ||LoG(x) - LoG(ref)|| / ||LoG(ref)||` with a 15 x 15, sigma 1.5
/// kernel and zero-padded filtering.
pub fn hfen(x: &RealTensor, r: &RealTensor) -> Result<f64> {
    check_pair(x, r)?;
    ensure(x.ndim() == 2, || "hfen needs 2-d images".into())?;
    let (fx, fr) = (log_filter(x), log_filter(r));
    let den = l2(fr.iter().copied());
    ensure(den > 0.0, || {
        "reference has no high-frequency content".into()
    })?;
    Ok(100.0 * l2(fx.iter().zip(&fr).map(|(a, b)| a - b)) / den)
}

/// All four metrics. SSIM is taken after dividing both images by the
/// reference's peak magnitude.
pub fn compute_metrics(
    x: &RealTensor,
    r: &RealTensor,
    params: &SsimParams,
) -> Result<MetricReport> {
    check_pair(x, r)?;
    let peak = r.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ssim = ssim_map(&x.map(|v| v / peak), &r.map(|v| v / peak), params)?;
    Ok(MetricReport {
        psnr: psnr(x, r)?,
        ssim,
        rmse: rmse(x, r)?,
        hfen: hfen(x, r)?,
    })
}

/// Population mean and standard deviation over `mask`.
pub fn roi_stats(map: &RealTensor, mask: &[bool]) -> Result<(f64, f64)> {
    ensure(mask.len() == map.len(), || {
        "mask and map sizes differ".into()
    })?;
    let vals: Vec<f64> = map
        .data()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect();
    ensure(!vals.is_empty(), || "ROI mask is empty".into())?;
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Mean over `roi` minus mean over its one-pixel 8-connected border ring.
pub fn sharpness(map: &RealTensor, roi: &[bool]) -> Result<f64> {
    ensure(map.ndim() == 2 && roi.len() == map.len(), || {
        "sharpness needs a 2-d map and a matching mask".into()
    })?;
    let (ny, nz) = (map.shape()[0], map.shape()[1]);
    ensure(roi.iter().any(|&m| m), || "ROI mask is empty".into())?;
    let mut ring = vec![false; roi.len()];
    for y in 0..ny {
        for z in 0..nz {
            if !roi[y * nz + z] {
                continue;
            }
            ensure(y > 0 && z > 0 && y + 1 < ny && z + 1 < nz, || {
                "ROI touches the image border".into()
            })?;
            for yy in y - 1..=y + 1 {
                for zz in z - 1..=z + 1 {
                    let i = yy * nz + zz;
                    ring[i] |= !roi[i];
                }
            }
        }
    }
    ensure(ring.iter().any(|&m| m), || {
        "dilated border ring is empty".into()
    })?;
    Ok(roi_stats(map, roi)?.0 - roi_stats(map, &ring)?.0)
}
