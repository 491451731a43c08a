//! A tape of dense `f64` buffers with hand-written vector-Jacobian products.
//!
//! Complex buffers are stored as interleaved `(re, im)` pairs; the gradient
//! of a real loss with respect to a complex value `z` is kept as
//! `dL/d re + i dL/d im` in the same layout.

use num_complex::Complex64;

use super::ssim::{ssim_with_grad, SsimParams};
use crate::error::{Error, Result};
use crate::recon::conv::{conv2d, conv2d_grad_input, conv2d_grad_params, ConvShape};
use crate::recon::safe_div;
use crate::signal::encoding::{adjoint_plane_accumulate, encode_plane};
use crate::signal::CoilSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageDims {
    pub n_echoes: usize,
    pub ny: usize,
    pub nz: usize,
}

impl ImageDims {
    fn plane(&self) -> usize {
        self.ny * self.nz
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// Per-echo `Re <a_j, b_j>` of two complex images.
    EchoDot(Var, Var),
    /// `s_j * a_j` with `s` one real per echo.
    EchoScale(Var, Var),
    /// Elementwise `a / b`, 0 where `b == 0`.
    Div(Var, Var),
    Encode {
        x: Var,
        mask: Var,
    },
    Adjoint {
        b: Var,
        mask: Var,
    },
    /// Complex `[nt, h, w]` to real `[nt, 2, h, w]`.
    ToChannels(Var),
    FromChannels(Var),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        shape: ConvShape,
    },
    Relu(Var),
    Slice {
        x: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    /// `-mean_c SSIM(x_c / scale, t_c / scale)` over the real and imaginary
    /// channel of every echo.
    SsimLoss {
        x: Var,
        target: Vec<f64>,
        scale: f64,
        params: SsimParams,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::EchoDot(..) => "echo-dot",
            Op::EchoScale(..) => "echo-scale",
            Op::Div(..) => "div",
            Op::Encode { .. } => "encode",
            Op::Adjoint { .. } => "adjoint",
            Op::ToChannels(_) => "to-channels",
            Op::FromChannels(_) => "from-channels",
            Op::Conv { .. } => "conv",
            Op::Relu(_) => "relu",
            Op::Slice { .. } => "slice",
            Op::Concat(_) => "concat",
            Op::SsimLoss { .. } => "ssim-loss",
        }
    }
}

struct Node {
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'a> {
    nodes: Vec<Node>,
    coils: &'a CoilSet,
    dims: ImageDims,
}

fn as_complex(v: &[f64]) -> &[Complex64] {
    bytemuck::cast_slice(v)
}

fn as_complex_mut(v: &mut [f64]) -> &mut [Complex64] {
    bytemuck::cast_slice_mut(v)
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Gradients indexed by [`Var`]; absent entries are zero.
pub struct Grads(Vec<Option<Vec<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0[v.0].as_deref()
    }

    pub fn take(&mut self, v: Var, len: usize) -> Vec<f64> {
        self.0[v.0].take().unwrap_or_else(|| vec![0.0; len])
    }
}

impl<'a> Graph<'a> {
    pub fn new(coils: &'a CoilSet, dims: ImageDims) -> Self {
        Graph {
            nodes: Vec::new(),
            coils,
            dims,
        }
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Input => false,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::EchoDot(a, b)
            | Op::EchoScale(a, b)
            | Op::Div(a, b) => self.rg(*a) || self.rg(*b),
            Op::Scale(a, _) | Op::ToChannels(a) | Op::FromChannels(a) | Op::Relu(a) => self.rg(*a),
            Op::Slice { x, .. } | Op::SsimLoss { x, .. } => self.rg(*x),
            Op::Encode { x, mask } => self.rg(*x) || self.rg(*mask),
            Op::Adjoint { b, mask } => self.rg(*b) || self.rg(*mask),
            Op::Conv { x, w, b, .. } => self.rg(*x) || self.rg(*w) || self.rg(*b),
            Op::Concat(parts) => parts.iter().any(|p| self.rg(*p)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf; `requires_grad` marks it as a parameter.
    pub fn input(&mut self, value: Vec<f64>, requires_grad: bool) -> Var {
        let v = self.push(value, Op::Input);
        self.nodes[v.0].requires_grad = requires_grad;
        v
    }

    pub fn complex_input(&mut self, value: &[Complex64]) -> Var {
        self.input(bytemuck::cast_slice(value).to_vec(), false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        self.push(v, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * k).collect();
        self.push(v, Op::Scale(a, k))
    }

    pub fn echo_dot(&mut self, a: Var, b: Var) -> Var {
        let n = 2 * self.dims.plane();
        let (va, vb) = (self.value(a), self.value(b));
        let v = (0..self.dims.n_echoes)
            .map(|j| {
                va[j * n..(j + 1) * n]
                    .chunks_exact(2)
                    .zip(vb[j * n..(j + 1) * n].chunks_exact(2))
                    .map(|(x, y)| x[0] * y[0] + x[1] * y[1])
                    .sum()
            })
            .collect();
        self.push(v, Op::EchoDot(a, b))
    }

    pub fn echo_scale(&mut self, s: Var, a: Var) -> Var {
        let n = 2 * self.dims.plane();
        let (vs, va) = (self.value(s), self.value(a));
        let v = va
            .chunks_exact(2)
            .enumerate()
            .flat_map(|(i, c)| {
                let k = vs[2 * i / n];
                [c[0] * k, c[1] * k]
            })
            .collect();
        self.push(v, Op::EchoScale(s, a))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| safe_div(x, y))
            .collect();
        self.push(v, Op::Div(a, b))
    }

    /// `U_j F (E_k x_j)` for every echo and coil: `[nt, nc, ny, nz]`.
    pub fn encode(&mut self, x: Var, mask: Var) -> Var {
        let d = self.dims;
        let (plane, nc) = (d.plane(), self.coils.n_coils());
        let mut out = vec![0.0; 2 * d.n_echoes * nc * plane];
        {
            let xs = as_complex(self.value(x));
            let m = self.value(mask);
            let dst = as_complex_mut(&mut out);
            for j in 0..d.n_echoes {
                for k in 0..nc {
                    encode_plane(
                        &xs[j * plane..(j + 1) * plane],
                        self.coils.map(k),
                        &m[j * plane..(j + 1) * plane],
                        &mut dst[(j * nc + k) * plane..(j * nc + k + 1) * plane],
                        d.ny,
                        d.nz,
                    );
                }
            }
        }
        self.push(out, Op::Encode { x, mask })
    }

    /// `sum_k conj(E_k) F^-1 (U_j b_jk)`: `[nt, ny, nz]`.
    pub fn adjoint(&mut self, b: Var, mask: Var) -> Var {
        let d = self.dims;
        let out = adjoint_values(self.value(b), self.value(mask), self.coils, d);
        self.push(out, Op::Adjoint { b, mask })
    }

    pub fn to_channels(&mut self, x: Var) -> Var {
        let plane = self.dims.plane();
        let xs = as_complex(self.value(x));
        let mut out = Vec::with_capacity(2 * xs.len());
        for slab in xs.chunks_exact(plane) {
            out.extend(slab.iter().map(|c| c.re));
            out.extend(slab.iter().map(|c| c.im));
        }
        self.push(out, Op::ToChannels(x))
    }

    pub fn from_channels(&mut self, y: Var) -> Var {
        let plane = self.dims.plane();
        let ys = self.value(y);
        let mut out = Vec::with_capacity(ys.len());
        for pair in ys.chunks_exact(2 * plane) {
            for p in 0..plane {
                out.push(pair[p]);
                out.push(pair[plane + p]);
            }
        }
        self.push(out, Op::FromChannels(y))
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Var, shape: ConvShape) -> Var {
        let out = conv2d(self.value(x), self.value(w), self.value(b), shape);
        self.push(out, Op::Conv { x, w, b, shape })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        self.push(out, Op::Relu(x))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x)[start..start + len].to_vec();
        self.push(out, Op::Slice { x, start })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let out = parts
            .iter()
            .flat_map(|&p| self.value(p).iter().copied())
            .collect();
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// Negative mean SSIM over the `2 * n_echoes` real channels of the
    /// complex image `x` against `target`, both divided by `scale`.
    pub fn ssim_loss(
        &mut self,
        x: Var,
        target: &[Complex64],
        scale: f64,
        params: SsimParams,
    ) -> Result<Var> {
        let (loss, _) = ssim_loss_eval(self.value(x), target, scale, &params, self.dims, false)?;
        let t = bytemuck::cast_slice(target).to_vec();
        Ok(self.push(
            vec![loss],
            Op::SsimLoss {
                x,
                target: t,
                scale,
                params,
            },
        ))
    }

    /// First node holding a non-finite value, with its op name.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .position(|n| n.value.iter().any(|v| !v.is_finite()))
            .map(|i| (i, self.nodes[i].op.name()))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if let Some((i, name)) = self.first_non_finite() {
            return Err(Error::numeric(format!(
                "non-finite value at node {i} ({name})"
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads(grads))
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let d = self.dims;
        let plane = d.plane();
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |s| axpy(s, 1.0, g));
                self.accumulate(grads, *b, |s| axpy(s, 1.0, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |s| axpy(s, 1.0, g));
                self.accumulate(grads, *b, |s| axpy(s, -1.0, g));
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, |s| axpy(s, *k, g)),
            Op::EchoDot(a, b) => {
                let n = 2 * plane;
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |s| {
                    for j in 0..d.n_echoes {
                        axpy(&mut s[j * n..(j + 1) * n], g[j], &vb[j * n..(j + 1) * n]);
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for j in 0..d.n_echoes {
                        axpy(&mut s[j * n..(j + 1) * n], g[j], &va[j * n..(j + 1) * n]);
                    }
                });
            }
            Op::EchoScale(sc, a) => {
                let n = 2 * plane;
                let (vs, va) = (self.value(*sc), self.value(*a));
                self.accumulate(grads, *sc, |s| {
                    for j in 0..d.n_echoes {
                        s[j] += g[j * n..(j + 1) * n]
                            .iter()
                            .zip(&va[j * n..(j + 1) * n])
                            .map(|(p, q)| p * q)
                            .sum::<f64>();
                    }
                });
                self.accumulate(grads, *a, |s| {
                    for j in 0..d.n_echoes {
                        axpy(&mut s[j * n..(j + 1) * n], vs[j], &g[j * n..(j + 1) * n]);
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |s| {
                    for k in 0..s.len() {
                        s[k] += safe_div(g[k], vb[k]);
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for k in 0..s.len() {
                        s[k] -= safe_div(g[k] * va[k], vb[k] * vb[k]);
                    }
                });
            }
            Op::Encode { x, mask } => {
                let m = self.value(*mask);
                if self.rg(*x) {
                    let gx = adjoint_values(g, m, self.coils, d);
                    self.accumulate(grads, *x, |s| axpy(s, 1.0, &gx));
                }
                if self.rg(*mask) {
                    let full = encode_values(self.value(*x), None, self.coils, d);
                    let gm = mask_grad(g, &full, self.coils.n_coils(), d);
                    self.accumulate(grads, *mask, |s| axpy(s, 1.0, &gm));
                }
            }
            Op::Adjoint { b, mask } => {
                let m = self.value(*mask);
                let full = encode_values(g, None, self.coils, d);
                if self.rg(*b) {
                    let nc = self.coils.n_coils();
                    self.accumulate(grads, *b, |s| {
                        for (idx, (dst, src)) in
                            s.chunks_exact_mut(2).zip(full.chunks_exact(2)).enumerate()
                        {
                            let (j, p) = (idx / (nc * plane), idx % plane);
                            dst[0] += m[j * plane + p] * src[0];
                            dst[1] += m[j * plane + p] * src[1];
                        }
                    });
                }
                if self.rg(*mask) {
                    let gm = mask_grad(&full, self.value(*b), self.coils.n_coils(), d);
                    self.accumulate(grads, *mask, |s| axpy(s, 1.0, &gm));
                }
            }
            Op::ToChannels(x) => {
                self.accumulate(grads, *x, |s| {
                    for (j, pair) in g.chunks_exact(2 * plane).enumerate() {
                        for p in 0..plane {
                            s[2 * (j * plane + p)] += pair[p];
                            s[2 * (j * plane + p) + 1] += pair[plane + p];
                        }
                    }
                });
            }
            Op::FromChannels(y) => {
                self.accumulate(grads, *y, |s| {
                    for (j, pair) in s.chunks_exact_mut(2 * plane).enumerate() {
                        for p in 0..plane {
                            pair[p] += g[2 * (j * plane + p)];
                            pair[plane + p] += g[2 * (j * plane + p) + 1];
                        }
                    }
                });
            }
            Op::Conv { x, w, b, shape } => {
                if self.rg(*x) {
                    let gx = conv2d_grad_input(g, self.value(*w), *shape);
                    self.accumulate(grads, *x, |s| axpy(s, 1.0, &gx));
                }
                if self.rg(*w) || self.rg(*b) {
                    let (gw, gb) = conv2d_grad_params(self.value(*x), g, *shape);
                    self.accumulate(grads, *w, |s| axpy(s, 1.0, &gw));
                    self.accumulate(grads, *b, |s| axpy(s, 1.0, &gb));
                }
            }
            Op::Relu(x) => {
                let out = &self.nodes[i].value;
                self.accumulate(grads, *x, |s| {
                    for k in 0..s.len() {
                        if out[k] > 0.0 {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::Slice { x, start } => {
                self.accumulate(grads, *x, |s| {
                    axpy(&mut s[*start..*start + g.len()], 1.0, g)
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    self.accumulate(grads, *p, |s| axpy(s, 1.0, &g[off..off + len]));
                    off += len;
                }
            }
            Op::SsimLoss {
                x,
                target,
                scale,
                params,
            } => {
                let (_, gx) =
                    ssim_loss_eval(self.value(*x), as_complex(target), *scale, params, d, true)
                        .expect("checked in the forward pass");
                self.accumulate(grads, *x, |s| axpy(s, g[0], &gx));
            }
        }
    }
}

fn encode_values(x: &[f64], mask: Option<&[f64]>, coils: &CoilSet, d: ImageDims) -> Vec<f64> {
    let (plane, nc) = (d.plane(), coils.n_coils());
    let ones = vec![1.0; plane];
    let mut out = vec![0.0; 2 * d.n_echoes * nc * plane];
    let xs = as_complex(x);
    let dst = as_complex_mut(&mut out);
    for j in 0..d.n_echoes {
        let m = mask.map_or(&ones[..], |m| &m[j * plane..(j + 1) * plane]);
        for k in 0..nc {
            encode_plane(
                &xs[j * plane..(j + 1) * plane],
                coils.map(k),
                m,
                &mut dst[(j * nc + k) * plane..(j * nc + k + 1) * plane],
                d.ny,
                d.nz,
            );
        }
    }
    out
}

fn adjoint_values(b: &[f64], mask: &[f64], coils: &CoilSet, d: ImageDims) -> Vec<f64> {
    let (plane, nc) = (d.plane(), coils.n_coils());
    let mut out = vec![0.0; 2 * d.n_echoes * plane];
    let bs = as_complex(b);
    let dst = as_complex_mut(&mut out);
    let mut tmp = vec![Complex64::default(); plane];
    for j in 0..d.n_echoes {
        for k in 0..nc {
            adjoint_plane_accumulate(
                &bs[(j * nc + k) * plane..(j * nc + k + 1) * plane],
                coils.map(k),
                &mask[j * plane..(j + 1) * plane],
                &mut tmp,
                &mut dst[j * plane..(j + 1) * plane],
                d.ny,
                d.nz,
            );
        }
    }
    out
}

/// `sum_k Re(conj(a_jk) b_jk)` per echo and location.
fn mask_grad(a: &[f64], b: &[f64], nc: usize, d: ImageDims) -> Vec<f64> {
    let plane = d.plane();
    let (ac, bc) = (as_complex(a), as_complex(b));
    let mut out = vec![0.0; d.n_echoes * plane];
    for j in 0..d.n_echoes {
        for k in 0..nc {
            let off = (j * nc + k) * plane;
            for p in 0..plane {
                let (x, y) = (ac[off + p], bc[off + p]);
                out[j * plane + p] += x.re * y.re + x.im * y.im;
            }
        }
    }
    out
}

fn ssim_loss_eval(
    x: &[f64],
    target: &[Complex64],
    scale: f64,
    params: &SsimParams,
    d: ImageDims,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let plane = d.plane();
    let xs = as_complex(x);
    let n_channels = 2 * d.n_echoes;
    let mut total = 0.0;
    let mut grad = if want_grad {
        vec![0.0; x.len()]
    } else {
        Vec::new()
    };
    for j in 0..d.n_echoes {
        for part in 0..2 {
            let pick = |c: &Complex64| (if part == 0 { c.re } else { c.im }) / scale;
            let a: Vec<f64> = xs[j * plane..(j + 1) * plane].iter().map(pick).collect();
            let t: Vec<f64> = target[j * plane..(j + 1) * plane]
                .iter()
                .map(pick)
                .collect();
            let (v, g) = ssim_with_grad(&a, &t, d.ny, d.nz, params)?;
            total += v;
            if want_grad {
                for p in 0..plane {
                    grad[2 * (j * plane + p) + part] = -g[p] / (scale * n_channels as f64);
                }
            }
        }
    }
    Ok((-total / n_channels as f64, grad))
}
