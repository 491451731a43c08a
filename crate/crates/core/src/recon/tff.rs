//! Recurrent temporal feature fusion denoiser.
//!
//! Each echo image (real and imaginary parts as two channels) passes through
//! an input convolution; a hidden convolution carries features from echo to
//! echo, `h_j = ReLU(N_s(x_j) + N_h(h_{j-1}))` with `h_0 = 0`. The hidden
//! states of all echoes are stacked along the channel axis and a plain
//! convolutional stack maps them back to `2 * n_echoes` channels. The same
//! weights serve every echo.
//!
//! The ablated variant drops the recurrence: `h_j = ReLU(N_2(ReLU(N_s(x_j))))`,
//! where `N_2` occupies the hidden-layer slot so both variants have the same
//! parameter count.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::conv::{conv2d, relu, ConvShape};
use crate::error::{ensure, Error, Result};
use crate::signal::MultiEchoImage;
use crate::tensor::{
    read_tensor, write_tensor, AnyTensor, Complex64, ComplexTensor, RealTensor, Rng,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TffArch {
    pub n_echoes: usize,
    /// Feature channels per echo.
    pub hidden: usize,
    /// Channels of the inner denoiser layers.
    pub width: usize,
    /// Convolutions in the denoiser stack.
    pub n_layers: usize,
    pub kernel: usize,
}

impl TffArch {
    pub fn desk(n_echoes: usize) -> Self {
        TffArch {
            n_echoes,
            hidden: 8,
            width: 16,
            n_layers: 3,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.n_echoes >= 1, || "n_echoes must be >= 1".into())?;
        ensure(self.hidden >= 1 && self.width >= 1, || {
            "hidden and width must be >= 1".into()
        })?;
        ensure(self.n_layers >= 1, || "n_layers must be >= 1".into())?;
        ensure(self.kernel % 2 == 1, || {
            format!("kernel size must be odd, got {}", self.kernel)
        })
    }

    /// `(c_out, c_in)` of each denoiser layer.
    fn denoiser_channels(&self) -> Vec<(usize, usize)> {
        (0..self.n_layers)
            .map(|l| {
                let c_in = if l == 0 {
                    self.n_echoes * self.hidden
                } else {
                    self.width
                };
                let c_out = if l + 1 == self.n_layers {
                    2 * self.n_echoes
                } else {
                    self.width
                };
                (c_out, c_in)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TffVariant {
    Recurrent,
    Ablated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    /// `[c_out, c_in, k, k]`
    pub weight: RealTensor,
    /// `[c_out]`
    pub bias: RealTensor,
}

impl ConvLayer {
    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        ConvLayer {
            weight: RealTensor::zeros(&[c_out, c_in, k, k]),
            bias: RealTensor::zeros(&[c_out]),
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn k(&self) -> usize {
        self.weight.shape()[2]
    }

    pub(crate) fn conv_shape(&self, n: usize, h: usize, w: usize) -> ConvShape {
        ConvShape {
            n,
            c_in: self.c_in(),
            c_out: self.c_out(),
            h,
            w,
            k: self.k(),
        }
    }

    pub fn apply(&self, x: &[f64], n: usize, h: usize, w: usize) -> Vec<f64> {
        conv2d(
            x,
            self.weight.data(),
            self.bias.data(),
            self.conv_shape(n, h, w),
        )
    }

    fn set_center(&mut self, o: usize, i: usize, v: f64) {
        let k = self.k();
        let (c_in, p) = (self.c_in(), k / 2);
        self.weight.data_mut()[((o * c_in + i) * k + p) * k + p] = v;
    }

    fn check(&self, name: &str, c_out: usize, c_in: usize, k: usize) -> Result<()> {
        ensure(self.weight.shape() == [c_out, c_in, k, k], || {
            format!(
                "{name} weight has shape {:?}, expected {:?}",
                self.weight.shape(),
                [c_out, c_in, k, k]
            )
        })?;
        ensure(self.bias.shape() == [c_out], || {
            format!(
                "{name} bias has shape {:?}, expected [{c_out}]",
                self.bias.shape()
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TffWeights {
    /// `N_s`: 2 -> hidden.
    pub input: ConvLayer,
    /// `N_h`: hidden -> hidden (second input layer in the ablated variant).
    pub hidden: ConvLayer,
    pub denoiser: Vec<ConvLayer>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    arch: TffArch,
    layers: Vec<ManifestLayer>,
}

#[derive(Serialize, Deserialize)]
struct ManifestLayer {
    name: String,
    weight_file: String,
    weight_shape: Vec<usize>,
    bias_file: String,
    bias_shape: Vec<usize>,
}

impl TffWeights {
    pub fn zeros(arch: TffArch) -> Result<Self> {
        arch.validate()?;
        let k = arch.kernel;
        Ok(TffWeights {
            input: ConvLayer::zeros(arch.hidden, 2, k),
            hidden: ConvLayer::zeros(arch.hidden, arch.hidden, k),
            denoiser: arch
                .denoiser_channels()
                .into_iter()
                .map(|(o, i)| ConvLayer::zeros(o, i, k))
                .collect(),
        })
    }

    /// He-normal kernels, zero biases.
    pub fn random(arch: TffArch, rng: &mut Rng) -> Result<Self> {
        let mut w = Self::zeros(arch)?;
        w.add_noise(1.0, rng);
        Ok(w)
    }

    /// Starts close to the identity map: the first four feature channels of
    /// each echo hold `[re, -re, im, -im]` so ReLU passes the signal intact,
    /// the inner layers copy those channels and the last layer recombines
    /// them. The recurrent path starts switched off; in the ablated variant
    /// the hidden slot copies its input. `noise` scales He-normal
    /// perturbations added everywhere. Channels that do not fit in `hidden`
    /// or `width` are left to the noise.
    pub fn identity_init(
        arch: TffArch,
        variant: TffVariant,
        noise: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut w = Self::zeros(arch)?;
        let (nt, ch) = (arch.n_echoes, arch.hidden);
        let q = ch.min(4);
        for c in 0..q {
            w.input
                .set_center(c, c / 2, if c % 2 == 0 { 1.0 } else { -1.0 });
            if variant == TffVariant::Ablated {
                w.hidden.set_center(c, c, 1.0);
            }
        }
        let n_layers = arch.n_layers;
        for (l, layer) in w.denoiser.iter_mut().enumerate() {
            let last = l + 1 == n_layers;
            for j in 0..nt {
                for c in 0..q {
                    let src = if l == 0 { j * ch + c } else { 4 * j + c };
                    if src >= layer.c_in() {
                        continue;
                    }
                    if last {
                        let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                        layer.set_center(2 * j + c / 2, src, sign);
                    } else if 4 * j + c < layer.c_out() {
                        layer.set_center(4 * j + c, src, 1.0);
                    }
                }
            }
        }
        w.add_noise(noise, rng);
        Ok(w)
    }

    fn add_noise(&mut self, scale: f64, rng: &mut Rng) {
        if scale == 0.0 {
            return;
        }
        for layer in self.layers_mut() {
            let fan_in = (layer.c_in() * layer.k() * layer.k()) as f64;
            let std = scale * (2.0 / fan_in).sqrt();
            for v in layer.weight.data_mut() {
                *v += std * rng.normal();
            }
        }
    }

    pub fn arch(&self) -> TffArch {
        TffArch {
            n_echoes: self.denoiser.last().map_or(0, |l| l.c_out() / 2),
            hidden: self.input.c_out(),
            width: if self.denoiser.len() > 1 {
                self.denoiser[0].c_out()
            } else {
                self.input.c_out()
            },
            n_layers: self.denoiser.len(),
            kernel: self.input.k(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.denoiser.is_empty(), || {
            "denoiser stack is empty".into()
        })?;
        ensure(self.input.weight.ndim() == 4, || {
            "input weight must be 4-d".into()
        })?;
        let arch = self.arch();
        arch.validate()?;
        let k = arch.kernel;
        self.input.check("input", arch.hidden, 2, k)?;
        self.hidden.check("hidden", arch.hidden, arch.hidden, k)?;
        for (l, ((o, i), layer)) in arch
            .denoiser_channels()
            .into_iter()
            .zip(&self.denoiser)
            .enumerate()
        {
            layer.check(&format!("denoiser.{l}"), o, i, k)?;
        }
        Ok(())
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut names = vec!["input".to_string(), "hidden".to_string()];
        names.extend((0..self.denoiser.len()).map(|l| format!("denoiser.{l}")));
        names
    }

    pub fn layers(&self) -> Vec<&ConvLayer> {
        let mut v = vec![&self.input, &self.hidden];
        v.extend(self.denoiser.iter());
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvLayer> {
        let mut v = vec![&mut self.input, &mut self.hidden];
        v.extend(self.denoiser.iter_mut());
        v
    }

    /// Every kernel and bias tensor in layer order, weight before bias.
    pub fn tensors(&self) -> Vec<&RealTensor> {
        self.layers()
            .into_iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut RealTensor> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Writes one METF file per tensor plus `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut layers = Vec::new();
        for (name, layer) in self.layer_names().into_iter().zip(self.layers()) {
            let weight_file = format!("{name}.weight.metf");
            let bias_file = format!("{name}.bias.metf");
            write_tensor(
                &AnyTensor::Real(layer.weight.clone()),
                dir.join(&weight_file),
            )?;
            write_tensor(&AnyTensor::Real(layer.bias.clone()), dir.join(&bias_file))?;
            layers.push(ManifestLayer {
                name,
                weight_file,
                weight_shape: layer.weight.shape().to_vec(),
                bias_file,
                bias_shape: layer.bias.shape().to_vec(),
            });
        }
        let manifest = Manifest {
            arch: self.arch(),
            layers,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        crate::io_util::write_atomic(&dir.join("manifest.json"), text.as_bytes())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let mut w = Self::zeros(manifest.arch)?;
        let names = w.layer_names();
        ensure(manifest.layers.len() == names.len(), || {
            format!(
                "manifest lists {} layers, architecture needs {}",
                manifest.layers.len(),
                names.len()
            )
        })?;
        for ((entry, name), layer) in manifest.layers.iter().zip(&names).zip(w.layers_mut()) {
            ensure(&entry.name == name, || {
                format!(
                    "manifest layer `{}` where `{name}` was expected",
                    entry.name
                )
            })?;
            let weight = read_tensor(dir.join(&entry.weight_file))?.into_real()?;
            let bias = read_tensor(dir.join(&entry.bias_file))?.into_real()?;
            ensure(
                weight.shape() == entry.weight_shape.as_slice()
                    && bias.shape() == entry.bias_shape.as_slice(),
                || format!("layer `{name}` tensors disagree with the manifest"),
            )?;
            layer.weight = weight;
            layer.bias = bias;
        }
        w.validate()?;
        Ok(w)
    }
}

/// `[nt, h, w]` complex to `[nt, 2, h, w]` real (real part first).
pub(crate) fn to_channels(x: &ComplexTensor) -> Vec<f64> {
    let plane = x.slab_len();
    let mut out = Vec::with_capacity(2 * x.len());
    for j in 0..x.shape()[0] {
        out.extend(x.slab(j).iter().map(|c| c.re));
        out.extend(x.slab(j).iter().map(|c| c.im));
    }
    debug_assert_eq!(out.len(), 2 * plane * x.shape()[0]);
    out
}

pub(crate) fn from_channels(y: &[f64], nt: usize, h: usize, w: usize) -> ComplexTensor {
    let plane = h * w;
    let mut data = Vec::with_capacity(nt * plane);
    for j in 0..nt {
        let re = &y[2 * j * plane..][..plane];
        let im = &y[(2 * j + 1) * plane..][..plane];
        data.extend(re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)));
    }
    ComplexTensor::from_vec(&[nt, h, w], data).expect("length matches")
}

fn check_input(x: &MultiEchoImage, w: &TffWeights) -> Result<()> {
    w.validate()?;
    ensure(w.arch().n_echoes == x.n_echoes(), || {
        format!(
            "weights are built for {} echoes, image has {}",
            w.arch().n_echoes,
            x.n_echoes()
        )
    })
}

/// Recurrent features `[nt * hidden, h, w]`.
pub(crate) fn recurrent_features(
    x: &[f64],
    wt: &TffWeights,
    nt: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let ch = wt.input.c_out();
    let plane = h * w;
    let injected = wt.input.apply(x, nt, h, w);
    let mut out = Vec::with_capacity(nt * ch * plane);
    let mut state = vec![0.0; ch * plane];
    for j in 0..nt {
        let mut pre = wt.hidden.apply(&state, 1, h, w);
        for (p, s) in pre
            .iter_mut()
            .zip(&injected[j * ch * plane..][..ch * plane])
        {
            *p += s;
        }
        relu(&mut pre);
        out.extend_from_slice(&pre);
        state = pre;
    }
    out
}

/// Echo-independent features `[nt * hidden, h, w]`.
pub(crate) fn ablated_features(
    x: &[f64],
    wt: &TffWeights,
    nt: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut a = wt.input.apply(x, nt, h, w);
    relu(&mut a);
    let mut b = wt.hidden.apply(&a, nt, h, w);
    relu(&mut b);
    b
}

pub(crate) fn denoiser_stack(features: &[f64], wt: &TffWeights, h: usize, w: usize) -> Vec<f64> {
    let mut x = features.to_vec();
    let n = wt.denoiser.len();
    for (l, layer) in wt.denoiser.iter().enumerate() {
        x = layer.apply(&x, 1, h, w);
        if l + 1 < n {
            relu(&mut x);
        }
    }
    x
}

pub fn tff_forward(x: &MultiEchoImage, w: &TffWeights) -> Result<MultiEchoImage> {
    check_input(x, w)?;
    let (nt, (h, wd)) = (x.n_echoes(), x.dims());
    let feats = recurrent_features(&to_channels(x.data()), w, nt, h, wd);
    let y = denoiser_stack(&feats, w, h, wd);
    x.with_data(from_channels(&y, nt, h, wd))
}

pub fn tff_ablated_forward(x: &MultiEchoImage, w: &TffWeights) -> Result<MultiEchoImage> {
    check_input(x, w)?;
    let (nt, (h, wd)) = (x.n_echoes(), x.dims());
    let feats = ablated_features(&to_channels(x.data()), w, nt, h, wd);
    let y = denoiser_stack(&feats, w, h, wd);
    x.with_data(from_channels(&y, nt, h, wd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::conv::tests::naive_conv;
    use crate::recon::conv::ConvShape;

    fn random_image(rng: &mut Rng, nt: usize, h: usize, w: usize) -> MultiEchoImage {
        let data = (0..nt * h * w)
            .map(|_| Complex64::new(rng.normal(), rng.normal()))
            .collect();
        MultiEchoImage::new(
            ComplexTensor::from_vec(&[nt, h, w], data).unwrap(),
            (0..nt).map(|j| 0.003 * (j + 1) as f64).collect(),
        )
        .unwrap()
    }

    fn tiny_arch(nt: usize) -> TffArch {
        TffArch {
            n_echoes: nt,
            hidden: 4,
            width: 4,
            n_layers: 3,
            kernel: 3,
        }
    }

    fn random_weights(arch: TffArch, seed: u64) -> TffWeights {
        let mut rng = Rng::new(seed);
        let mut w = TffWeights::random(arch, &mut rng).unwrap();
        for l in w.layers_mut() {
            for b in l.bias.data_mut() {
                *b = 0.1 * rng.normal();
            }
        }
        w
    }

    fn naive_layer(
        x: &[f64],
        n: usize,
        h: usize,
        w: usize,
        layer: &ConvLayer,
        relu: bool,
    ) -> Vec<f64> {
        let s = ConvShape {
            n,
            c_in: layer.c_in(),
            c_out: layer.c_out(),
            h,
            w,
            k: layer.k(),
        };
        let mut y = naive_conv(x, layer.weight.data(), layer.bias.data(), s);
        if relu {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        y
    }

    /// Echo-by-echo reference built only from the loop-nest convolution.
    fn naive_forward(x: &MultiEchoImage, wt: &TffWeights, recurrent: bool) -> Vec<Complex64> {
        let (nt, (h, w)) = (x.n_echoes(), x.dims());
        let plane = h * w;
        let ch = wt.input.c_out();
        let mut feats = Vec::new();
        let mut state = vec![0.0; ch * plane];
        for j in 0..nt {
            let mut xj: Vec<f64> = x.data().slab(j).iter().map(|c| c.re).collect();
            xj.extend(x.data().slab(j).iter().map(|c| c.im));
            let hj = if recurrent {
                let a = naive_layer(&xj, 1, h, w, &wt.input, false);
                let b = naive_layer(&state, 1, h, w, &wt.hidden, false);
                a.iter().zip(&b).map(|(p, q)| (p + q).max(0.0)).collect()
            } else {
                let a = naive_layer(&xj, 1, h, w, &wt.input, true);
                naive_layer(&a, 1, h, w, &wt.hidden, true)
            };
            feats.extend_from_slice(&hj);
            state = hj;
        }
        let n = wt.denoiser.len();
        for (l, layer) in wt.denoiser.iter().enumerate() {
            feats = naive_layer(&feats, 1, h, w, layer, l + 1 < n);
        }
        (0..nt * plane)
            .map(|i| {
                let (j, p) = (i / plane, i % plane);
                Complex64::new(feats[2 * j * plane + p], feats[(2 * j + 1) * plane + p])
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = Rng::new(1);
        let x = random_image(&mut rng, 3, 6, 5);
        let w = TffWeights::zeros(tiny_arch(3)).unwrap();
        assert_eq!(tff_forward(&x, &w).unwrap().data().norm(), 0.0);
        assert_eq!(tff_ablated_forward(&x, &w).unwrap().data().norm(), 0.0);
    }

    #[test]
    fn matches_loop_nest_oracle() {
        let mut rng = Rng::new(2);
        let x = random_image(&mut rng, 2, 8, 8);
        let w = random_weights(tiny_arch(2), 3);
        for recurrent in [true, false] {
            let fast = if recurrent {
                tff_forward(&x, &w).unwrap()
            } else {
                tff_ablated_forward(&x, &w).unwrap()
            };
            let slow = naive_forward(&x, &w, recurrent);
            for (a, b) in fast.data().data().iter().zip(&slow) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn bias_free_positive_path_is_linear() {
        let mut rng = Rng::new(4);
        let x = random_image(&mut rng, 2, 6, 6);
        let mut w = random_weights(tiny_arch(2), 5);
        for l in w.layers_mut() {
            l.bias.data_mut().fill(0.0);
        }
        let nt = 2;
        let xc = to_channels(x.data());
        let x2: Vec<f64> = xc.iter().map(|v| 2.0 * v).collect();
        let a = w.input.apply(&xc, nt, 6, 6);
        let b = w.input.apply(&x2, nt, 6, 6);
        for (p, q) in a.iter().zip(&b) {
            assert!((2.0 * p - q).abs() < 1e-12);
        }
        // ReLU is positively homogeneous, so the whole network is too
        let y1 = tff_forward(&x, &w).unwrap();
        let y2 = tff_forward(&x.with_data(x.data().map(|c| c * 2.0)).unwrap(), &w).unwrap();
        for (p, q) in y1.data().data().iter().zip(y2.data().data()) {
            assert!((p * 2.0 - q).norm() < 1e-12);
        }
    }

    #[test]
    fn ablated_features_commute_with_echo_permutation() {
        let mut rng = Rng::new(6);
        let (nt, h, w) = (3, 5, 7);
        let x = random_image(&mut rng, nt, h, w);
        let wt = random_weights(tiny_arch(nt), 7);
        let perm = [2, 0, 1];
        let permuted = ComplexTensor::from_vec(
            &[nt, h, w],
            perm.iter()
                .flat_map(|&j| x.data().slab(j).to_vec())
                .collect(),
        )
        .unwrap();
        let f = ablated_features(&to_channels(x.data()), &wt, nt, h, w);
        let g = ablated_features(&to_channels(&permuted), &wt, nt, h, w);
        let block = 4 * h * w;
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(
                &g[new * block..(new + 1) * block],
                &f[old * block..(old + 1) * block]
            );
        }
        let r = recurrent_features(&to_channels(x.data()), &wt, nt, h, w);
        let rp = recurrent_features(&to_channels(&permuted), &wt, nt, h, w);
        assert_ne!(&rp[..block], &r[2 * block..3 * block]);
    }

    #[test]
    fn identity_init_without_noise_is_exact_identity() {
        let mut rng = Rng::new(8);
        let x = random_image(&mut rng, 2, 6, 6);
        let arch = TffArch {
            n_echoes: 2,
            hidden: 4,
            width: 8,
            n_layers: 3,
            kernel: 3,
        };
        let rec = TffWeights::identity_init(arch, TffVariant::Recurrent, 0.0, &mut rng).unwrap();
        assert_eq!(tff_forward(&x, &rec).unwrap(), x);
        let abl = TffWeights::identity_init(arch, TffVariant::Ablated, 0.0, &mut rng).unwrap();
        assert_eq!(tff_ablated_forward(&x, &abl).unwrap(), x);
        let one = TffArch {
            n_layers: 1,
            ..arch
        };
        let w1 = TffWeights::identity_init(one, TffVariant::Recurrent, 0.0, &mut rng).unwrap();
        assert_eq!(tff_forward(&x, &w1).unwrap(), x);
        assert_eq!(rec.n_params(), abl.n_params());
    }

    #[test]
    fn shapes_are_validated() {
        let mut rng = Rng::new(9);
        let x = random_image(&mut rng, 3, 4, 4);
        let w = TffWeights::zeros(tiny_arch(2)).unwrap();
        assert!(tff_forward(&x, &w).is_err());
        let mut bad = TffWeights::zeros(tiny_arch(3)).unwrap();
        bad.hidden = ConvLayer::zeros(4, 3, 3);
        assert!(bad.validate().is_err());
        assert!(TffArch {
            kernel: 4,
            ..tiny_arch(2)
        }
        .validate()
        .is_err());
        assert_eq!(
            TffWeights::zeros(TffArch::desk(4)).unwrap().arch(),
            TffArch::desk(4)
        );
    }

    #[test]
    fn archive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = random_weights(tiny_arch(2), 10);
        w.save(dir.path()).unwrap();
        assert_eq!(TffWeights::load(dir.path()).unwrap(), w);
        let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(manifest.contains("denoiser.2.weight.metf"));
        std::fs::remove_file(dir.path().join("hidden.bias.metf")).unwrap();
        assert!(TffWeights::load(dir.path()).is_err());
    }
}
