//! Windowed structural similarity with uniform windows, unit stride and
//! population statistics, averaged over all windows that fit the image.

use crate::error::{ensure, Result};
use crate::tensor::RealTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 10,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl SsimParams {
    pub fn with_window(window: usize) -> Self {
        SsimParams {
            window,
            ..Self::default()
        }
    }
}

/// Sums over every `win x win` window that fits: `[h - win + 1, w - win + 1]`.
fn box_sum(x: &[f64], h: usize, w: usize, win: usize) -> Vec<f64> {
    let (oh, ow) = (h + 1 - win, w + 1 - win);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let src = &x[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = src[c..c + win].iter().sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for k in 0..win {
            let src = &rows[(r + k) * ow..(r + k + 1) * ow];
            for (o, s) in out[r * ow..(r + 1) * ow].iter_mut().zip(src) {
                *o += s;
            }
        }
    }
    out
}

/// Adjoint of [`box_sum`]: each pixel collects the windows covering it.
fn box_sum_adjoint(g: &[f64], h: usize, w: usize, win: usize) -> Vec<f64> {
    let (oh, ow) = (h + 1 - win, w + 1 - win);
    let mut rows = vec![0.0; h * ow];
    for r in 0..oh {
        for k in 0..win {
            let dst = &mut rows[(r + k) * ow..(r + k + 1) * ow];
            for (d, s) in dst.iter_mut().zip(&g[r * ow..(r + 1) * ow]) {
                *d += s;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..ow {
            let v = rows[r * ow + c];
            for o in &mut out[r * w + c..r * w + c + win] {
                *o += v;
            }
        }
    }
    out
}

struct Windows {
    mx: Vec<f64>,
    my: Vec<f64>,
    qx: Vec<f64>,
    qy: Vec<f64>,
    pxy: Vec<f64>,
}

fn windows(x: &[f64], y: &[f64], h: usize, w: usize, win: usize) -> Windows {
    let n = (win * win) as f64;
    let scaled = |v: Vec<f64>| v.into_iter().map(|s| s / n).collect::<Vec<_>>();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    Windows {
        mx: scaled(box_sum(x, h, w, win)),
        my: scaled(box_sum(y, h, w, win)),
        qx: scaled(box_sum(&sq(x, x), h, w, win)),
        qy: scaled(box_sum(&sq(y, y), h, w, win)),
        pxy: scaled(box_sum(&sq(x, y), h, w, win)),
    }
}

fn check(x: &[f64], y: &[f64], h: usize, w: usize, p: &SsimParams) -> Result<()> {
    ensure(x.len() == h * w && y.len() == h * w, || {
        format!("images must both hold {h} x {w} values")
    })?;
    ensure(p.window >= 1 && p.window <= h && p.window <= w, || {
        format!(
            "{h} x {w} image is smaller than the {0} x {0} window",
            p.window
        )
    })
}

/// Mean SSIM of two `h x w` images.
pub fn ssim_slices(x: &[f64], y: &[f64], h: usize, w: usize, p: &SsimParams) -> Result<f64> {
    check(x, y, h, w, p)?;
    let s = windows(x, y, h, w, p.window);
    let mut total = 0.0;
    for i in 0..s.mx.len() {
        let (mx, my) = (s.mx[i], s.my[i]);
        let vx = s.qx[i] - mx * mx;
        let vy = s.qy[i] - my * my;
        let cxy = s.pxy[i] - mx * my;
        total += (2.0 * mx * my + p.c1) * (2.0 * cxy + p.c2)
            / ((mx * mx + my * my + p.c1) * (vx + vy + p.c2));
    }
    Ok(total / s.mx.len() as f64)
}

/// Mean SSIM of two 2-d images.
pub fn ssim_map(x: &RealTensor, y: &RealTensor, p: &SsimParams) -> Result<f64> {
    ensure(x.ndim() == 2 && x.shape() == y.shape(), || {
        format!(
            "ssim needs two equal 2-d shapes, got {:?} and {:?}",
            x.shape(),
            y.shape()
        )
    })?;
    ssim_slices(x.data(), y.data(), x.shape()[0], x.shape()[1], p)
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    p: &SsimParams,
) -> Result<(f64, Vec<f64>)> {
    check(x, y, h, w, p)?;
    let s = windows(x, y, h, w, p.window);
    let nw = s.mx.len();
    let (mut ga, mut gb, mut gc) = (vec![0.0; nw], vec![0.0; nw], vec![0.0; nw]);
    let mut total = 0.0;
    for i in 0..nw {
        let (mx, my) = (s.mx[i], s.my[i]);
        let a = 2.0 * mx * my + p.c1;
        let b = 2.0 * (s.pxy[i] - mx * my) + p.c2;
        let c = mx * mx + my * my + p.c1;
        let d = (s.qx[i] - mx * mx) + (s.qy[i] - my * my) + p.c2;
        let v = a * b / (c * d);
        total += v;
        // d/d mean_x, d/d E[x^2], d/d E[xy]
        ga[i] = v * (2.0 * my / a - 2.0 * my / b - 2.0 * mx / c + 2.0 * mx / d);
        gb[i] = -v / d;
        gc[i] = 2.0 * v / b;
    }
    let scale = 1.0 / ((p.window * p.window) as f64 * nw as f64);
    let ta = box_sum_adjoint(&ga, h, w, p.window);
    let tb = box_sum_adjoint(&gb, h, w, p.window);
    let tc = box_sum_adjoint(&gc, h, w, p.window);
    let grad = (0..h * w)
        .map(|i| scale * (ta[i] + 2.0 * x[i] * tb[i] + y[i] * tc[i]))
        .collect();
    Ok((total / nw as f64, grad))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tensor::Rng;

    /// Direct double loop over windows and their pixels.
    pub(crate) fn brute_ssim(x: &[f64], y: &[f64], h: usize, w: usize, p: &SsimParams) -> f64 {
        let win = p.window;
        let n = (win * win) as f64;
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..=h - win {
            for c in 0..=w - win {
                let px = |i: usize, j: usize| x[(r + i) * w + c + j];
                let py = |i: usize, j: usize| y[(r + i) * w + c + j];
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        mx += px(i, j);
                        my += py(i, j);
                    }
                }
                mx /= n;
                my /= n;
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        vx += (px(i, j) - mx).powi(2);
                        vy += (py(i, j) - my).powi(2);
                        cxy += (px(i, j) - mx) * (py(i, j) - my);
                    }
                }
                vx /= n;
                vy /= n;
                cxy /= n;
                total += (2.0 * mx * my + p.c1) * (2.0 * cxy + p.c2)
                    / ((mx * mx + my * my + p.c1) * (vx + vy + p.c2));
                count += 1;
            }
        }
        total / count as f64
    }

    fn random(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform()).collect()
    }

    #[test]
    fn identical_images_score_one() {
        let mut rng = Rng::new(1);
        let x = random(&mut rng, 15 * 13);
        let s = ssim_slices(&x, &x, 15, 13, &SsimParams::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_shift_closed_form() {
        let (h, w) = (12, 12);
        let x = vec![0.3; h * w];
        let y = vec![0.8; h * w];
        let p = SsimParams::default();
        let expect = (2.0 * 0.3 * 0.8 + 1e-4) / (0.3f64 * 0.3 + 0.8 * 0.8 + 1e-4);
        let s = ssim_slices(&x, &y, h, w, &p).unwrap();
        assert!((s - expect).abs() < 1e-12, "{s} vs {expect}");
    }

    #[test]
    fn matches_brute_force_and_is_symmetric() {
        let mut rng = Rng::new(2);
        for (h, w, win) in [(12, 12, 10), (16, 11, 10), (8, 8, 4), (5, 9, 3)] {
            let p = SsimParams::with_window(win);
            let x = random(&mut rng, h * w);
            let y = random(&mut rng, h * w);
            let fast = ssim_slices(&x, &y, h, w, &p).unwrap();
            assert!((fast - brute_ssim(&x, &y, h, w, &p)).abs() < 1e-12);
            assert_eq!(fast, ssim_slices(&y, &x, h, w, &p).unwrap());
            assert!((-1.0..=1.0).contains(&fast));
        }
    }

    #[test]
    fn too_small_image_is_rejected() {
        let x = vec![0.0; 64];
        assert!(ssim_slices(&x, &x, 8, 8, &SsimParams::default()).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = Rng::new(3);
        let (h, w) = (9, 7);
        let p = SsimParams::with_window(4);
        let x = random(&mut rng, h * w);
        let y = random(&mut rng, h * w);
        let (v, g) = ssim_with_grad(&x, &y, h, w, &p).unwrap();
        assert_eq!(v, ssim_slices(&x, &y, h, w, &p).unwrap());
        let eps = 1e-5;
        for i in 0..h * w {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (ssim_slices(&xp, &y, h, w, &p).unwrap()
                - ssim_slices(&xm, &y, h, w, &p).unwrap())
                / (2.0 * eps);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-3),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }
}
