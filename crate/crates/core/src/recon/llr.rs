//! Locally low-rank denoising: singular-value soft-thresholding of the
//! `(pixels x echoes)` Casorati matrix of each non-overlapping patch.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{ensure, Result};
use crate::signal::MultiEchoImage;

/// Soft-thresholds the singular values of `m` by `lambda`.
///
/// Works through the eigendecomposition of the small Gram matrix
/// `G = m^H m = V S^2 V^H`, so that `m' = m V diag(max(s - lambda, 0) / s) V^H`.
pub fn soft_threshold_singular_values(m: &DMatrix<Complex64>, lambda: f64) -> DMatrix<Complex64> {
    if lambda == 0.0 {
        return m.clone();
    }
    let gram = m.adjoint() * m;
    let eig = gram.symmetric_eigen();
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        let s = ev.max(0.0).sqrt();
        let f = if s > lambda { (s - lambda) / s } else { 0.0 };
        scaled.column_mut(i).scale_mut(f);
    }
    m * (scaled * v.adjoint())
}

/// Patches tile the image from the origin; edge patches are cropped, which
/// matches zero padding since zero rows leave the singular values and the
/// right singular vectors unchanged.
pub fn llr_denoise(x: &MultiEchoImage, patch: usize, lambda: f64) -> Result<MultiEchoImage> {
    ensure(patch >= 1, || "patch size must be >= 1".into())?;
    ensure(lambda >= 0.0 && lambda.is_finite(), || {
        format!("lambda must be a finite value >= 0, got {lambda}")
    })?;
    if lambda == 0.0 {
        return Ok(x.clone());
    }
    let nt = x.n_echoes();
    let (ny, nz) = x.dims();
    let mut out = x.data().clone();
    for y0 in (0..ny).step_by(patch) {
        for z0 in (0..nz).step_by(patch) {
            let (y1, z1) = ((y0 + patch).min(ny), (z0 + patch).min(nz));
            let rows = (y1 - y0) * (z1 - z0);
            let idx = |r: usize| (y0 + r / (z1 - z0)) * nz + z0 + r % (z1 - z0);
            let m = DMatrix::from_fn(rows, nt, |r, j| x.data().slab(j)[idx(r)]);
            let t = soft_threshold_singular_values(&m, lambda);
            for j in 0..nt {
                let slab = out.slab_mut(j);
                for r in 0..rows {
                    slab[idx(r)] = t[(r, j)];
                }
            }
        }
    }
    x.with_data(out)
}
