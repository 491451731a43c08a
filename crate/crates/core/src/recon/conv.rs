//! Stride-1 "same" 2-d cross-correlation with zero padding, and its two
//! adjoints. Activations are `[n, c, h, w]` row-major, kernels
//! `[c_out, c_in, k, k]` with odd `k`.

use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvShape {
    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Output rows `y` (or columns) for which tap `d` reads inside the image.
    fn valid(&self, d: usize, len: usize) -> (usize, usize) {
        let p = self.k / 2;
        let lo = p.saturating_sub(d);
        (lo, (len + p).saturating_sub(d).min(len).max(lo))
    }
}

/// `y[b, o] = bias[o] + sum_i x[b, i] (*) weight[o, i]`.
pub fn conv2d(x: &[f64], weight: &[f64], bias: &[f64], s: ConvShape) -> Vec<f64> {
    let plane = s.plane();
    let mut y = vec![0.0; s.n * s.c_out * plane];
    y.par_chunks_mut(plane).enumerate().for_each(|(idx, out)| {
        let (b, o) = (idx / s.c_out, idx % s.c_out);
        out.fill(bias[o]);
        for i in 0..s.c_in {
            let inp = &x[(b * s.c_in + i) * plane..][..plane];
            let taps = &weight[(o * s.c_in + i) * s.k * s.k..][..s.k * s.k];
            correlate_into(out, inp, taps, s, false);
        }
    });
    y
}

/// Gradient with respect to the input.
pub fn conv2d_grad_input(gy: &[f64], weight: &[f64], s: ConvShape) -> Vec<f64> {
    let plane = s.plane();
    let mut gx = vec![0.0; s.n * s.c_in * plane];
    gx.par_chunks_mut(plane).enumerate().for_each(|(idx, out)| {
        let (b, i) = (idx / s.c_in, idx % s.c_in);
        for o in 0..s.c_out {
            let g = &gy[(b * s.c_out + o) * plane..][..plane];
            let taps = &weight[(o * s.c_in + i) * s.k * s.k..][..s.k * s.k];
            correlate_into(out, g, taps, s, true);
        }
    });
    gx
}

/// Gradients with respect to the kernel and the bias.
pub fn conv2d_grad_params(x: &[f64], gy: &[f64], s: ConvShape) -> (Vec<f64>, Vec<f64>) {
    let plane = s.plane();
    let kk = s.k * s.k;
    let p = s.k / 2;
    let mut gw = vec![0.0; s.c_out * s.c_in * kk];
    gw.par_chunks_mut(s.c_in * kk)
        .enumerate()
        .for_each(|(o, gwo)| {
            for b in 0..s.n {
                let g = &gy[(b * s.c_out + o) * plane..][..plane];
                for i in 0..s.c_in {
                    let inp = &x[(b * s.c_in + i) * plane..][..plane];
                    for dy in 0..s.k {
                        let (y0, y1) = s.valid(dy, s.h);
                        for dx in 0..s.k {
                            let (x0, x1) = s.valid(dx, s.w);
                            if x0 == x1 {
                                continue;
                            }
                            let mut acc = 0.0;
                            for yy in y0..y1 {
                                let iy = yy + dy - p;
                                let grow = &g[yy * s.w + x0..yy * s.w + x1];
                                let irow = &inp[iy * s.w + x0 + dx - p..iy * s.w + x1 + dx - p];
                                acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                            }
                            gwo[(i * s.k + dy) * s.k + dx] += acc;
                        }
                    }
                }
            }
        });
    let gb = (0..s.c_out)
        .map(|o| {
            (0..s.n)
                .map(|b| gy[(b * s.c_out + o) * plane..][..plane].iter().sum::<f64>())
                .sum()
        })
        .collect();
    (gw, gb)
}

/// Accumulates one channel pair. Forward: `out[y] += t[d] * src[y + d - p]`;
/// transposed: `out[y + d - p] += t[d] * src[y]`.
fn correlate_into(out: &mut [f64], src: &[f64], taps: &[f64], s: ConvShape, transposed: bool) {
    let p = s.k / 2;
    for dy in 0..s.k {
        let (y0, y1) = s.valid(dy, s.h);
        for dx in 0..s.k {
            let t = taps[dy * s.k + dx];
            if t == 0.0 {
                continue;
            }
            let (x0, x1) = s.valid(dx, s.w);
            if x0 == x1 {
                continue;
            }
            for yy in y0..y1 {
                let iy = yy + dy - p;
                let a = yy * s.w + x0;
                let b = iy * s.w + x0 + dx - p;
                let len = x1 - x0;
                let (dst, from) = if transposed {
                    (&mut out[b..b + len], &src[a..a + len])
                } else {
                    (&mut out[a..a + len], &src[b..b + len])
                };
                for (d, v) in dst.iter_mut().zip(from) {
                    *d += t * v;
                }
            }
        }
    }
}

pub fn relu(x: &mut [f64]) {
    for v in x {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tensor::Rng;

    /// Direct loop nest over every output pixel and tap.
    pub(crate) fn naive_conv(x: &[f64], weight: &[f64], bias: &[f64], s: ConvShape) -> Vec<f64> {
        let p = s.k as isize / 2;
        let mut y = vec![0.0; s.n * s.c_out * s.h * s.w];
        for b in 0..s.n {
            for o in 0..s.c_out {
                for r in 0..s.h {
                    for c in 0..s.w {
                        let mut acc = bias[o];
                        for i in 0..s.c_in {
                            for dy in 0..s.k {
                                for dx in 0..s.k {
                                    let iy = r as isize + dy as isize - p;
                                    let ix = c as isize + dx as isize - p;
                                    if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize
                                    {
                                        continue;
                                    }
                                    acc += weight[((o * s.c_in + i) * s.k + dy) * s.k + dx]
                                        * x[((b * s.c_in + i) * s.h + iy as usize) * s.w
                                            + ix as usize];
                                }
                            }
                        }
                        y[((b * s.c_out + o) * s.h + r) * s.w + c] = acc;
                    }
                }
            }
        }
        y
    }

    fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    fn shapes() -> Vec<ConvShape> {
        vec![
            ConvShape {
                n: 1,
                c_in: 1,
                c_out: 1,
                h: 1,
                w: 1,
                k: 3,
            },
            ConvShape {
                n: 2,
                c_in: 3,
                c_out: 2,
                h: 5,
                w: 7,
                k: 3,
            },
            ConvShape {
                n: 1,
                c_in: 2,
                c_out: 4,
                h: 8,
                w: 8,
                k: 5,
            },
            ConvShape {
                n: 3,
                c_in: 1,
                c_out: 2,
                h: 2,
                w: 6,
                k: 1,
            },
            ConvShape {
                n: 1,
                c_in: 2,
                c_out: 1,
                h: 3,
                w: 2,
                k: 7,
            },
        ]
    }

    #[test]
    fn matches_loop_nest() {
        let mut rng = Rng::new(11);
        for s in shapes() {
            let x = rand_vec(&mut rng, s.n * s.c_in * s.h * s.w);
            let w = rand_vec(&mut rng, s.c_out * s.c_in * s.k * s.k);
            let b = rand_vec(&mut rng, s.c_out);
            let fast = conv2d(&x, &w, &b, s);
            let slow = naive_conv(&x, &w, &b, s);
            for (a, e) in fast.iter().zip(&slow) {
                assert!((a - e).abs() < 1e-12, "{s:?}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn adjoints_satisfy_dot_product_identities() {
        let mut rng = Rng::new(12);
        for s in shapes() {
            let x = rand_vec(&mut rng, s.n * s.c_in * s.h * s.w);
            let w = rand_vec(&mut rng, s.c_out * s.c_in * s.k * s.k);
            let gy = rand_vec(&mut rng, s.n * s.c_out * s.h * s.w);
            let zero_b = vec![0.0; s.c_out];
            let y = conv2d(&x, &w, &zero_b, s);
            let lhs: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
            let gx = conv2d_grad_input(&gy, &w, s);
            let rx: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
            let (gw, gb) = conv2d_grad_params(&x, &gy, s);
            let rw: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((lhs - rx).abs() < 1e-10 * (1.0 + lhs.abs()), "{s:?}");
            assert!((lhs - rw).abs() < 1e-10 * (1.0 + lhs.abs()), "{s:?}");
            let ones = vec![1.0; s.c_out];
            let yb = conv2d(&vec![0.0; x.len()], &vec![0.0; w.len()], &ones, s);
            let rb: f64 = yb.iter().zip(&gy).map(|(a, b)| a * b).sum();
            assert!((gb.iter().sum::<f64>() - rb).abs() < 1e-10);
        }
    }

    #[test]
    fn relu_zeroes_non_positive() {
        let mut v = vec![-1.0, 0.0, 2.0, -0.0];
        relu(&mut v);
        assert_eq!(v, vec![0.0, 0.0, 2.0, 0.0]);
    }
}
