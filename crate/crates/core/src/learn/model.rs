//! The differentiable reconstruction: unrolled ADMM with CG data
//! consistency and the convolutional denoiser, scored by negative SSIM.

use serde::{Deserialize, Serialize};

use super::graph::{Grads, Graph, ImageDims, Var};
use super::ssim::SsimParams;
use crate::error::{ensure, Error, Result};
use crate::pattern::{build_prob_pattern, calib_block, straight_through_grad, PatternWeights};
use crate::recon::{AdmmConfig, Denoiser, TffVariant, TffWeights};
use crate::signal::{CoilSet, KSpaceData, MultiEchoImage};
use crate::tensor::{ComplexTensor, RealTensor};

/// One training example: fully sampled k-space, its coil maps and the
/// ground-truth image.
#[derive(Clone, Debug)]
pub struct Sample {
    pub kspace: KSpaceData,
    pub coils: CoilSet,
    pub truth: MultiEchoImage,
}

impl Sample {
    pub fn dims(&self) -> ImageDims {
        let (ny, nz) = self.truth.dims();
        ImageDims {
            n_echoes: self.truth.n_echoes(),
            ny,
            nz,
        }
    }

    /// Largest ground-truth magnitude, used to bring SSIM inputs to unit range.
    pub fn scale(&self) -> f64 {
        self.truth
            .data()
            .data()
            .iter()
            .fold(0.0f64, |m, c| m.max(c.norm()))
    }
}

/// Iteration counts of the unrolled reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unroll {
    pub n_unrolled: usize,
    pub rho: f64,
    pub cg_iters: usize,
}

impl Unroll {
    pub fn admm_config(&self, denoiser: Denoiser) -> AdmmConfig {
        AdmmConfig {
            n_unrolled: self.n_unrolled,
            rho: self.rho,
            cg_iters: self.cg_iters,
            denoiser,
        }
    }
}

/// Weight and bias leaves of every layer, in [`TffWeights::layers`] order.
pub struct NetVars(Vec<(Var, Var)>);

impl NetVars {
    pub fn new(g: &mut Graph, w: &TffWeights, requires_grad: bool) -> Self {
        NetVars(
            w.layers()
                .into_iter()
                .map(|l| {
                    (
                        g.input(l.weight.data().to_vec(), requires_grad),
                        g.input(l.bias.data().to_vec(), requires_grad),
                    )
                })
                .collect(),
        )
    }

    /// Gradient tensors in [`TffWeights::tensors`] order.
    pub fn gradients(&self, grads: &mut Grads, w: &TffWeights) -> Vec<RealTensor> {
        let tensors = w.tensors();
        self.0
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .zip(tensors)
            .map(|(v, t)| {
                RealTensor::from_vec(t.shape(), grads.take(v, t.len())).expect("same length")
            })
            .collect()
    }
}

fn conv_layer(
    g: &mut Graph,
    x: Var,
    w: &TffWeights,
    vars: &NetVars,
    layer: usize,
    n: usize,
) -> Var {
    let d = g.dims();
    let l = w.layers()[layer];
    let (wv, bv) = vars.0[layer];
    g.conv(x, wv, bv, l.conv_shape(n, d.ny, d.nz))
}

/// The denoiser applied to the complex image `x`.
pub fn denoise(g: &mut Graph, x: Var, w: &TffWeights, vars: &NetVars, variant: TffVariant) -> Var {
    let d = g.dims();
    let nt = d.n_echoes;
    let ch = w.input.c_out();
    let plane = d.ny * d.nz;
    let xc = g.to_channels(x);
    let features = match variant {
        TffVariant::Recurrent => {
            let injected = conv_layer(g, xc, w, vars, 0, nt);
            let mut state = g.input(vec![0.0; ch * plane], false);
            let mut hs = Vec::with_capacity(nt);
            for j in 0..nt {
                let carried = conv_layer(g, state, w, vars, 1, 1);
                let own = g.slice(injected, j * ch * plane, ch * plane);
                let pre = g.add(carried, own);
                state = g.relu(pre);
                hs.push(state);
            }
            g.concat(&hs)
        }
        TffVariant::Ablated => {
            let a = conv_layer(g, xc, w, vars, 0, nt);
            let a = g.relu(a);
            let b = conv_layer(g, a, w, vars, 1, nt);
            g.relu(b)
        }
    };
    let n = w.denoiser.len();
    let mut y = features;
    for l in 0..n {
        y = conv_layer(g, y, w, vars, 2 + l, 1);
        if l + 1 < n {
            y = g.relu(y);
        }
    }
    g.from_channels(y)
}

/// CG on `(A^H A + (rho/2) I) s = rhs` from `s = 0`.
fn cg(g: &mut Graph, rhs: Var, mask: Var, rho: f64, iters: usize) -> Var {
    let mut x = None;
    let mut r = rhs;
    let mut p = rhs;
    let mut rs = g.echo_dot(r, r);
    for it in 0..iters {
        let k = g.encode(p, mask);
        let ahap = g.adjoint(k, mask);
        let shifted = g.scale(p, rho / 2.0);
        let ap = g.add(ahap, shifted);
        let pap = g.echo_dot(p, ap);
        let alpha = g.div(rs, pap);
        let step = g.echo_scale(alpha, p);
        x = Some(match x {
            None => step,
            Some(prev) => g.add(prev, step),
        });
        let down = g.echo_scale(alpha, ap);
        r = g.sub(r, down);
        if it + 1 < iters {
            let rs_new = g.echo_dot(r, r);
            let beta = g.div(rs_new, rs);
            let keep = g.echo_scale(beta, p);
            p = g.add(r, keep);
            rs = rs_new;
        }
    }
    x.expect("at least one CG iteration")
}

/// Unrolled ADMM from the zero-filled start; returns the final `v`.
pub fn unrolled_forward(
    g: &mut Graph,
    kspace: Var,
    mask: Var,
    w: &TffWeights,
    vars: &NetVars,
    variant: TffVariant,
    unroll: &Unroll,
) -> Var {
    let d = g.dims();
    let rho = unroll.rho;
    let atb = g.adjoint(kspace, mask);
    let mut v = atb;
    let mut u = g.input(vec![0.0; 2 * d.n_echoes * d.ny * d.nz], false);
    for _ in 0..unroll.n_unrolled {
        let pv = g.scale(v, rho / 2.0);
        let lhs = g.add(atb, pv);
        let rhs = g.sub(lhs, u);
        let s = cg(g, rhs, mask, rho, unroll.cg_iters);
        let us = g.scale(u, 1.0 / rho);
        let vt = g.add(s, us);
        v = denoise(g, vt, w, vars, variant);
        let gap = g.sub(s, v);
        let step = g.scale(gap, rho);
        u = g.add(u, step);
    }
    v
}

/// Loss value and gradients of one sample.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    /// In [`TffWeights::tensors`] order; empty when not requested.
    pub net: Vec<RealTensor>,
    /// `dL/dU`; present when requested.
    pub mask: Option<RealTensor>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec<'a> {
    pub net: &'a TffWeights,
    pub variant: TffVariant,
    pub unroll: Unroll,
    pub ssim: SsimParams,
}

fn check_sample(sample: &Sample, mask: &RealTensor, spec: &LossSpec) -> Result<()> {
    spec.unroll.admm_config(Denoiser::Identity).validate()?;
    spec.net.validate()?;
    let d = sample.dims();
    ensure(mask.shape() == [d.n_echoes, d.ny, d.nz], || {
        format!("mask shape {:?} does not match the sample", mask.shape())
    })?;
    ensure(
        sample.kspace.dims() == (d.ny, d.nz) && sample.kspace.n_echoes() == d.n_echoes,
        || "k-space and truth shapes differ".into(),
    )?;
    ensure(spec.net.arch().n_echoes == d.n_echoes, || {
        "network echo count does not match the sample".into()
    })
}

/// Builds the graph for one sample and returns it with the loss node and
/// the mask and network leaves.
fn build<'s>(
    sample: &'s Sample,
    mask: &RealTensor,
    spec: &LossSpec,
    mask_grad: bool,
    net_grad: bool,
) -> Result<(Graph<'s>, Var, Var, NetVars, Var)> {
    check_sample(sample, mask, spec)?;
    let mut g = Graph::new(&sample.coils, sample.dims());
    let b = g.complex_input(sample.kspace.data().data());
    let m = g.input(mask.data().to_vec(), mask_grad);
    let vars = NetVars::new(&mut g, spec.net, net_grad);
    let v = unrolled_forward(&mut g, b, m, spec.net, &vars, spec.variant, &spec.unroll);
    let scale = sample.scale();
    ensure(scale > 0.0, || "ground truth is identically zero".into())?;
    let loss = g.ssim_loss(v, sample.truth.data().data(), scale, spec.ssim)?;
    Ok((g, loss, m, vars, v))
}

/// Reconstruction of `sample` under `mask` through the differentiable path.
pub fn forward_image(
    sample: &Sample,
    mask: &RealTensor,
    spec: &LossSpec,
) -> Result<MultiEchoImage> {
    let (g, _, _, _, v) = build(sample, mask, spec, false, false)?;
    let d = sample.dims();
    let data = bytemuck::cast_slice(g.value(v)).to_vec();
    sample
        .truth
        .with_data(ComplexTensor::from_vec(&[d.n_echoes, d.ny, d.nz], data)?)
}

pub fn loss_only(sample: &Sample, mask: &RealTensor, spec: &LossSpec) -> Result<f64> {
    let (g, loss, ..) = build(sample, mask, spec, false, false)?;
    let value = g.value(loss)[0];
    if !value.is_finite() {
        let (i, name) = g.first_non_finite().unwrap_or((loss.index(), "ssim-loss"));
        return Err(Error::numeric(format!(
            "non-finite loss; first at node {i} ({name})"
        )));
    }
    Ok(value)
}

pub fn loss_and_grad(
    sample: &Sample,
    mask: &RealTensor,
    spec: &LossSpec,
    mask_grad: bool,
    net_grad: bool,
) -> Result<LossGrad> {
    let (g, loss, m, vars, _) = build(sample, mask, spec, mask_grad, net_grad)?;
    let mut grads = g.backward(loss)?;
    let net = if net_grad {
        vars.gradients(&mut grads, spec.net)
    } else {
        Vec::new()
    };
    let mask = if mask_grad {
        Some(RealTensor::from_vec(
            mask.shape(),
            grads.take(m, mask.len()),
        )?)
    } else {
        None
    };
    Ok(LossGrad {
        loss: g.value(loss)[0],
        net,
        mask,
    })
}

/// The probabilistic pattern with the calibration block set to one: the
/// deterministic stand-in for the binary mask.
pub fn surrogate_mask(weights: &PatternWeights, calib_size: usize) -> Result<RealTensor> {
    let mut p = build_prob_pattern(weights)?.p;
    let (ny, nz) = (p.shape()[1], p.shape()[2]);
    let (ry, rz) = (calib_block(ny, calib_size)?, calib_block(nz, calib_size)?);
    for j in 0..p.shape()[0] {
        let slab = p.slab_mut(j);
        for y in ry.clone() {
            for z in rz.clone() {
                slab[y * nz + z] = 1.0;
            }
        }
    }
    Ok(p)
}

/// Pattern-weight gradient from `dL/dU`: calibration locations are fixed
/// and pass nothing back; everywhere else the binarization is
/// straight-through.
pub fn pattern_grad(
    dl_du: &RealTensor,
    weights: &PatternWeights,
    calib_size: usize,
) -> Result<RealTensor> {
    let mut g = dl_du.clone();
    let (ny, nz) = (g.shape()[1], g.shape()[2]);
    let (ry, rz) = (calib_block(ny, calib_size)?, calib_block(nz, calib_size)?);
    for j in 0..g.shape()[0] {
        let slab = g.slab_mut(j);
        for y in ry.clone() {
            for z in rz.clone() {
                slab[y * nz + z] = 0.0;
            }
        }
    }
    straight_through_grad(&g, weights)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::learn::gradient_check;
    use crate::pattern::{sample_pattern, PatternMode};
    use crate::recon::{admm_reconstruct, TffArch};
    use crate::signal::{
        encode, full_masks, generate_coils, generate_phantom, uniform_echo_times, PhantomSpec,
    };
    use crate::tensor::Rng;

    pub(crate) fn tiny_sample(n: usize, nt: usize, nc: usize, seed: u64) -> Sample {
        let mut rng = Rng::new(seed);
        let spec = PhantomSpec::random([n, n], &mut rng);
        let truth = generate_phantom(&spec, &uniform_echo_times(nt, 0.004, 0.004))
            .unwrap()
            .0;
        let coils = if nc == 1 {
            CoilSet::unit(n, n)
        } else {
            generate_coils(nc, [n, n], seed).unwrap()
        };
        let kspace = encode(&truth, &coils, &full_masks(nt, n, n)).unwrap();
        Sample {
            kspace,
            coils,
            truth,
        }
    }

    pub(crate) fn small_arch(nt: usize) -> TffArch {
        TffArch {
            n_echoes: nt,
            hidden: 4,
            width: 4,
            n_layers: 3,
            kernel: 3,
        }
    }

    fn spec(net: &TffWeights, variant: TffVariant) -> LossSpec<'_> {
        LossSpec {
            net,
            variant,
            unroll: Unroll {
                n_unrolled: 2,
                rho: 1.0,
                cg_iters: 3,
            },
            ssim: SsimParams::with_window(4),
        }
    }

    fn flat(w: &TffWeights) -> Vec<f64> {
        w.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
    }

    fn unflat(w: &mut TffWeights, x: &[f64]) {
        let mut off = 0;
        for t in w.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&x[off..off + n]);
            off += n;
        }
    }

    #[test]
    fn graph_forward_matches_plain_admm() {
        let s = tiny_sample(16, 3, 2, 4);
        let mut rng = Rng::new(9);
        let w = TffWeights::random(small_arch(3), &mut rng).unwrap();
        let weights = PatternWeights::zeros(3, 16, 16, 0.25, 0.3, PatternMode::PerEcho);
        let mask = sample_pattern(
            &build_prob_pattern(&weights).unwrap(),
            PatternMode::PerEcho,
            &mut rng,
            4,
        )
        .unwrap()
        .u;
        let b = s.kspace.masked(&mask).unwrap();
        for variant in [TffVariant::Recurrent, TffVariant::Ablated] {
            let sp = spec(&w, variant);
            let ours = forward_image(&s, &mask, &sp).unwrap();
            let den = match variant {
                TffVariant::Recurrent => Denoiser::Tff(w.clone()),
                TffVariant::Ablated => Denoiser::TffAblated(w.clone()),
            };
            let plain = admm_reconstruct(&b, &s.coils, &mask, &sp.unroll.admm_config(den)).unwrap();
            let diff = ours
                .data()
                .data()
                .iter()
                .zip(plain.data().data())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(diff <= 1e-12 * plain.data().norm(), "{variant:?}: {diff}");
        }
    }

    #[test]
    fn zero_network_loss_is_in_range() {
        let s = tiny_sample(8, 2, 1, 2);
        let w = TffWeights::zeros(small_arch(2)).unwrap();
        let mask = full_masks(2, 8, 8);
        let l = loss_only(&s, &mask, &spec(&w, TffVariant::Recurrent)).unwrap();
        assert!(l > -1.0 && l <= 0.0, "{l}");
        let lg = loss_and_grad(&s, &mask, &spec(&w, TffVariant::Recurrent), true, true).unwrap();
        assert_eq!(lg.loss, l);
        assert_eq!(lg.net.len(), w.tensors().len());
    }

    fn check_network(variant: TffVariant) {
        let s = tiny_sample(8, 2, 1, 11);
        let mut rng = Rng::new(3);
        let w = TffWeights::random(small_arch(2), &mut rng).unwrap();
        let weights = PatternWeights::zeros(2, 8, 8, 0.25, 0.4, PatternMode::PerEcho);
        let mask = sample_pattern(
            &build_prob_pattern(&weights).unwrap(),
            PatternMode::PerEcho,
            &mut rng,
            2,
        )
        .unwrap()
        .u;
        let sp = spec(&w, variant);
        let lg = loss_and_grad(&s, &mask, &sp, false, true).unwrap();
        let g: Vec<f64> = lg.net.iter().flat_map(|t| t.data().to_vec()).collect();
        let mut probe = w.clone();
        let r = gradient_check(
            |x| {
                unflat(&mut probe, x);
                loss_only(&s, &mask, &spec(&probe, variant))
            },
            &flat(&w),
            &g,
            1e-6,
            1e-8,
        )
        .unwrap();
        assert!(
            r.fraction_within(1e-5) >= 0.99,
            "{variant:?}: {}",
            r.fraction_within(1e-5)
        );
        assert!(
            r.worst < 1e-4,
            "{variant:?}: worst {} at {}",
            r.worst,
            r.worst_index
        );
    }

    #[test]
    fn network_gradient_matches_finite_differences() {
        check_network(TffVariant::Recurrent);
        check_network(TffVariant::Ablated);
    }

    #[test]
    fn pattern_gradient_matches_finite_differences() {
        let s = tiny_sample(8, 2, 1, 5);
        let mut rng = Rng::new(8);
        let net = TffWeights::random(small_arch(2), &mut rng).unwrap();
        let sp = spec(&net, TffVariant::Recurrent);
        let calib = 2;
        let mut weights = PatternWeights::zeros(2, 8, 8, 0.25, 0.4, PatternMode::PerEcho);
        for v in weights.w.data_mut() {
            *v = 2.0 * rng.normal();
        }
        let mask = surrogate_mask(&weights, calib).unwrap();
        let lg = loss_and_grad(&s, &mask, &sp, true, false).unwrap();
        let g = pattern_grad(lg.mask.as_ref().unwrap(), &weights, calib).unwrap();
        let mut probe = weights.clone();
        let r = gradient_check(
            |x| {
                probe.w.data_mut().copy_from_slice(x);
                loss_only(&s, &surrogate_mask(&probe, calib)?, &sp)
            },
            weights.w.data(),
            g.data(),
            1e-4,
            1e-8,
        )
        .unwrap();
        assert!(
            r.fraction_within(1e-5) >= 0.99,
            "{}",
            r.fraction_within(1e-5)
        );
        assert!(r.worst < 1e-4, "worst {} at {}", r.worst, r.worst_index);
    }

    #[test]
    fn shared_pattern_gradient_is_the_echo_sum() {
        let s = tiny_sample(8, 2, 1, 6);
        let mut rng = Rng::new(2);
        let net = TffWeights::random(small_arch(2), &mut rng).unwrap();
        let sp = spec(&net, TffVariant::Ablated);
        let mut weights = PatternWeights::zeros(2, 8, 8, 0.25, 0.4, PatternMode::Shared);
        let slab: Vec<f64> = (0..64).map(|_| rng.normal()).collect();
        weights.w.slab_mut(0).copy_from_slice(&slab);
        weights.w.slab_mut(1).copy_from_slice(&slab);
        let lg =
            loss_and_grad(&s, &surrogate_mask(&weights, 2).unwrap(), &sp, true, false).unwrap();
        let g = pattern_grad(lg.mask.as_ref().unwrap(), &weights, 2).unwrap();
        assert_eq!(g.slab(0), g.slab(1));
        let mut probe = weights.clone();
        let r = gradient_check(
            |x| {
                probe.w.slab_mut(0).copy_from_slice(x);
                probe.w.slab_mut(1).copy_from_slice(x);
                loss_only(&s, &surrogate_mask(&probe, 2)?, &sp)
            },
            &slab,
            g.slab(0),
            1e-6,
            1e-8,
        )
        .unwrap();
        assert!(r.worst < 1e-4, "worst {} at {}", r.worst, r.worst_index);
    }

    #[test]
    fn calibration_block_has_no_pattern_gradient() {
        let weights = PatternWeights::zeros(1, 8, 8, 0.25, 0.25, PatternMode::PerEcho);
        let p = surrogate_mask(&weights, 2).unwrap();
        assert_eq!(p.data()[3 * 8 + 3], 1.0);
        assert_eq!(p.data()[0], 0.25);
        let mut dl_du = RealTensor::zeros(&[1, 8, 8]);
        for y in 3..5 {
            for z in 3..5 {
                dl_du.data_mut()[y * 8 + z] = 1.0;
            }
        }
        let g = pattern_grad(&dl_du, &weights, 2).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let s = tiny_sample(8, 2, 1, 1);
        let w = TffWeights::zeros(small_arch(2)).unwrap();
        assert!(loss_only(&s, &full_masks(2, 8, 4), &spec(&w, TffVariant::Recurrent)).is_err());
        let w3 = TffWeights::zeros(small_arch(3)).unwrap();
        assert!(loss_only(&s, &full_masks(2, 8, 8), &spec(&w3, TffVariant::Recurrent)).is_err());
    }
}
