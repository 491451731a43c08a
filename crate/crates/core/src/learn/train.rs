//! Two-phase training: joint pattern and network updates with a fresh mask
//! draw per step, then network fine-tuning under a frozen mask.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::model::{loss_and_grad, loss_only, pattern_grad, LossSpec, Sample, Unroll};
use super::ssim::SsimParams;
use crate::error::{ensure, Error, Result};
use crate::pattern::{
    build_prob_pattern, sample_fixed_count, sample_pattern, BinaryPattern, ManualVdConfig,
    PatternMode, PatternWeights, ProbPattern,
};
use crate::recon::{TffArch, TffVariant, TffWeights};
use crate::tensor::{RealTensor, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: u8,
    pub epochs: usize,
    pub lr: f64,
    /// Adam step size for the pattern logits.
    pub pattern_lr: f64,
    /// Both step sizes are multiplied by this factor after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub mode: PatternMode,
    pub gamma: f64,
    pub slope: f64,
    pub calib_size: usize,
    pub variant: TffVariant,
    pub hidden: usize,
    pub width: usize,
    pub n_layers: usize,
    pub kernel: usize,
    /// Scale of the He-normal perturbation added to the identity start.
    pub init_noise: f64,
    pub unroll: Unroll,
    pub ssim_window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase: 1,
            epochs: 30,
            lr: 1e-3,
            pattern_lr: 0.05,
            lr_decay: 1.0,
            batch_size: 1,
            mode: PatternMode::PerEcho,
            gamma: 0.25,
            slope: 0.25,
            calib_size: 8,
            variant: TffVariant::Recurrent,
            hidden: 8,
            width: 16,
            n_layers: 3,
            kernel: 3,
            init_noise: 0.05,
            unroll: Unroll {
                n_unrolled: 3,
                rho: 1.0,
                cg_iters: 3,
            },
            ssim_window: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn arch(&self, n_echoes: usize) -> TffArch {
        TffArch {
            n_echoes,
            hidden: self.hidden,
            width: self.width,
            n_layers: self.n_layers,
            kernel: self.kernel,
        }
    }

    pub fn ssim(&self) -> SsimParams {
        SsimParams::with_window(self.ssim_window)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(f, m));
        if self.phase != 1 && self.phase != 2 {
            return bad("phase", "must be 1 or 2");
        }
        if self.batch_size != 1 {
            return bad("batch_size", "only batch size 1 is supported");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr", "must be finite and non-negative");
        }
        if !(self.pattern_lr.is_finite() && self.pattern_lr >= 0.0) {
            return bad("pattern_lr", "must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay", "must be in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(self.slope > 0.0 && self.slope.is_finite()) {
            return bad("slope", "must be positive");
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return bad("init_noise", "must be finite and non-negative");
        }
        if self.ssim_window == 0 {
            return bad("ssim_window", "must be positive");
        }
        if self.unroll.n_unrolled == 0 {
            return bad("unroll.n_unrolled", "must be positive");
        }
        if self.unroll.cg_iters == 0 {
            return bad("unroll.cg_iters", "must be positive");
        }
        if !(self.unroll.rho > 0.0 && self.unroll.rho.is_finite()) {
            return bad("unroll.rho", "must be positive");
        }
        self.arch(1)
            .validate()
            .map_err(|e| Error::config("hidden/width/n_layers/kernel", e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_loss: Option<f64>,
}

/// `epoch,mean_loss,val_loss`; the last field is empty without validation data.
pub fn loss_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,mean_loss,val_loss\n");
    for e in log {
        let val = e.val_loss.map(|v| format!("{v:.10}")).unwrap_or_default();
        s.push_str(&format!("{},{:.10},{}\n", e.epoch, e.mean_loss, val));
    }
    s
}

#[derive(Clone, Debug)]
pub struct Phase1Result {
    pub pattern: PatternWeights,
    pub net: TffWeights,
    /// The hand-designed mask used throughout in manual mode.
    pub manual_mask: Option<BinaryPattern>,
    pub log: Vec<EpochLog>,
}

fn dataset_dims(data: &[Sample]) -> Result<(usize, usize, usize)> {
    ensure(!data.is_empty(), || "training set is empty".into())?;
    let d = data[0].dims();
    ensure(data.iter().all(|s| s.dims() == d), || {
        "samples differ in shape".into()
    })?;
    Ok((d.n_echoes, d.ny, d.nz))
}

/// Probabilities of the hand-designed variable-density design, one slab per echo.
pub fn manual_density(n_echoes: usize, ny: usize, nz: usize, gamma: f64) -> Result<ProbPattern> {
    let slab = ManualVdConfig::default().density_map(ny, nz, gamma)?;
    let mut data = Vec::with_capacity(n_echoes * slab.len());
    for _ in 0..n_echoes {
        data.extend_from_slice(slab.data());
    }
    Ok(ProbPattern {
        p: RealTensor::from_vec(&[n_echoes, ny, nz], data)?,
    })
}

/// A binary mask with exactly `round(gamma ny nz)` samples per echo drawn
/// from `p`; shared and manual modes use one draw for every echo.
pub fn draw_fixed_mask(
    p: &ProbPattern,
    mode: PatternMode,
    gamma: f64,
    calib_size: usize,
    rng: &mut Rng,
) -> Result<BinaryPattern> {
    let shape = p.p.shape().to_vec();
    let count = (gamma * (shape[1] * shape[2]) as f64).round() as usize;
    if mode == PatternMode::PerEcho {
        return sample_fixed_count(p, count, rng, calib_size);
    }
    let first = ProbPattern {
        p: RealTensor::from_vec(&[1, shape[1], shape[2]], p.p.slab(0).to_vec())?,
    };
    let one = sample_fixed_count(&first, count, rng, calib_size)?;
    let mut data = Vec::with_capacity(one.u.len() * shape[0]);
    for _ in 0..shape[0] {
        data.extend_from_slice(one.u.data());
    }
    Ok(BinaryPattern {
        u: RealTensor::from_vec(&shape, data)?,
        calib_size,
    })
}

/// Probabilities the final mask of a phase-1 run is drawn from.
pub fn final_density(result: &Phase1Result, cfg: &TrainConfig) -> Result<ProbPattern> {
    if cfg.mode == PatternMode::Manual {
        let s = result.pattern.w.shape();
        manual_density(s[0], s[1], s[2], cfg.gamma)
    } else {
        build_prob_pattern(&result.pattern)
    }
}

/// Mean loss over `data` under one fixed mask, evaluated in parallel.
pub fn mean_loss(data: &[Sample], mask: &RealTensor, spec: &LossSpec) -> Result<f64> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|s| loss_only(s, mask, spec))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Joint training of the pattern logits and the denoiser. In manual mode
/// only the denoiser is trained, under one fixed variable-density mask.
pub fn train_phase1(train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<Phase1Result> {
    cfg.validate()?;
    ensure(cfg.phase == 1, || "phase-1 training needs phase = 1".into())?;
    let (nt, ny, nz) = dataset_dims(train)?;
    let root = Rng::new(cfg.seed);
    let mut net = TffWeights::identity_init(
        cfg.arch(nt),
        cfg.variant,
        cfg.init_noise,
        &mut root.split("init"),
    )?;
    let mut pattern = PatternWeights::zeros(nt, ny, nz, cfg.slope, cfg.gamma, cfg.mode);
    let learned = cfg.mode.is_learned();
    let manual_mask = if learned {
        None
    } else {
        let p = manual_density(nt, ny, nz, cfg.gamma)?;
        Some(draw_fixed_mask(
            &p,
            cfg.mode,
            cfg.gamma,
            cfg.calib_size,
            &mut root.split("manual-mask"),
        )?)
    };
    let mut net_opt = AdamState::for_tensors(cfg.lr, &net.tensors());
    let mut pat_opt = AdamState::new(cfg.pattern_lr, &[pattern.w.len()]);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let decay = cfg.lr_decay.powi(epoch as i32);
        net_opt.lr = cfg.lr * decay;
        pat_opt.lr = cfg.pattern_lr * decay;
        let mut erng = root.split_index("epoch", epoch as u64);
        erng.shuffle(&mut order);
        let mut total = 0.0;
        for &i in &order {
            let mask = match &manual_mask {
                Some(m) => m.u.clone(),
                None => {
                    let p = build_prob_pattern(&pattern)?;
                    sample_pattern(&p, cfg.mode, &mut erng, cfg.calib_size)?.u
                }
            };
            let spec = LossSpec {
                net: &net,
                variant: cfg.variant,
                unroll: cfg.unroll,
                ssim: cfg.ssim(),
            };
            let lg = loss_and_grad(&train[i], &mask, &spec, learned, true)?;
            total += lg.loss;
            adam_step(&mut net.tensors_mut(), &lg.net, &mut net_opt)?;
            if let Some(dl_du) = &lg.mask {
                let g = pattern_grad(dl_du, &pattern, cfg.calib_size)?;
                adam_step(&mut [&mut pattern.w], &[g], &mut pat_opt)?;
            }
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            let mask = match &manual_mask {
                Some(m) => m.u.clone(),
                None => {
                    let p = build_prob_pattern(&pattern)?;
                    draw_fixed_mask(
                        &p,
                        cfg.mode,
                        cfg.gamma,
                        cfg.calib_size,
                        &mut root.split("val-mask"),
                    )?
                    .u
                }
            };
            Some(mean_loss(
                val,
                &mask,
                &LossSpec {
                    net: &net,
                    variant: cfg.variant,
                    unroll: cfg.unroll,
                    ssim: cfg.ssim(),
                },
            )?)
        };
        log.push(EpochLog {
            epoch: epoch + 1,
            mean_loss: total / train.len() as f64,
            val_loss,
        });
    }
    Ok(Phase1Result {
        pattern,
        net,
        manual_mask,
        log,
    })
}

/// Fine-tunes the denoiser under `mask`; the pattern is not touched.
pub fn train_phase2(
    train: &[Sample],
    val: &[Sample],
    mask: &BinaryPattern,
    init: &TffWeights,
    cfg: &TrainConfig,
) -> Result<(TffWeights, Vec<EpochLog>)> {
    cfg.validate()?;
    ensure(cfg.phase == 2, || "phase-2 training needs phase = 2".into())?;
    let (nt, ny, nz) = dataset_dims(train)?;
    ensure(mask.u.shape() == [nt, ny, nz], || {
        format!("fixed mask {:?} does not match the data", mask.u.shape())
    })?;
    ensure(mask.u.data().iter().all(|&v| v == 0.0 || v == 1.0), || {
        "fixed mask must be binary".into()
    })?;
    let root = Rng::new(cfg.seed).split("phase2");
    let mut net = init.clone();
    let mut opt = AdamState::for_tensors(cfg.lr, &net.tensors());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        root.split_index("epoch", epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        for &i in &order {
            let spec = LossSpec {
                net: &net,
                variant: cfg.variant,
                unroll: cfg.unroll,
                ssim: cfg.ssim(),
            };
            let lg = loss_and_grad(&train[i], &mask.u, &spec, false, true)?;
            total += lg.loss;
            adam_step(&mut net.tensors_mut(), &lg.net, &mut opt)?;
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(mean_loss(
                val,
                &mask.u,
                &LossSpec {
                    net: &net,
                    variant: cfg.variant,
                    unroll: cfg.unroll,
                    ssim: cfg.ssim(),
                },
            )?)
        };
        log.push(EpochLog {
            epoch: epoch + 1,
            mean_loss: total / train.len() as f64,
            val_loss,
        });
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::model::tests::tiny_sample;

    fn tiny_cfg(mode: PatternMode) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            mode,
            gamma: 0.4,
            calib_size: 2,
            hidden: 4,
            width: 8,
            ssim_window: 4,
            unroll: Unroll {
                n_unrolled: 2,
                rho: 1.0,
                cg_iters: 3,
            },
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn data(n: usize, seed: u64) -> Vec<Sample> {
        (0..n)
            .map(|i| tiny_sample(8, 2, 1, seed + i as u64))
            .collect()
    }

    #[test]
    fn zero_epochs_leave_the_start() {
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_cfg(PatternMode::PerEcho)
        };
        let r = train_phase1(&data(2, 0), &[], &cfg).unwrap();
        assert!(r.log.is_empty());
        assert!(r.pattern.w.data().iter().all(|&v| v == 0.0));
        let init = TffWeights::identity_init(
            cfg.arch(2),
            cfg.variant,
            cfg.init_noise,
            &mut Rng::new(5).split("init"),
        )
        .unwrap();
        assert_eq!(r.net, init);
        let mask = draw_fixed_mask(
            &final_density(&r, &cfg).unwrap(),
            cfg.mode,
            0.4,
            2,
            &mut Rng::new(1),
        )
        .unwrap();
        let p2 = TrainConfig { phase: 2, ..cfg };
        let (net, log) = train_phase2(&data(2, 0), &[], &mask, &r.net, &p2).unwrap();
        assert_eq!(net, r.net);
        assert!(log.is_empty());
    }

    #[test]
    fn same_seed_same_log() {
        let d = data(3, 10);
        let v = data(1, 20);
        for mode in [
            PatternMode::Manual,
            PatternMode::Shared,
            PatternMode::PerEcho,
        ] {
            let cfg = tiny_cfg(mode);
            let a = train_phase1(&d, &v, &cfg).unwrap();
            let b = train_phase1(&d, &v, &cfg).unwrap();
            assert_eq!(loss_csv(&a.log), loss_csv(&b.log));
            assert_eq!(a.net, b.net);
            assert_eq!(a.pattern, b.pattern);
            assert_eq!(a.log.len(), 2);
            assert!(a
                .log
                .iter()
                .all(|e| e.mean_loss.is_finite() && e.val_loss.is_some()));
            assert_eq!(mode.is_learned(), a.manual_mask.is_none());
            if mode.is_learned() {
                assert!(a.pattern.w.data().iter().any(|&v| v != 0.0));
                a.pattern.validate().unwrap();
            }
        }
    }

    #[test]
    fn phase_two_keeps_mask_and_pattern() {
        let d = data(2, 30);
        let cfg = tiny_cfg(PatternMode::Shared);
        let r = train_phase1(&d, &[], &cfg).unwrap();
        let mask = draw_fixed_mask(
            &final_density(&r, &cfg).unwrap(),
            cfg.mode,
            0.4,
            2,
            &mut Rng::new(2),
        )
        .unwrap();
        let before = mask.clone();
        let p2 = TrainConfig {
            phase: 2,
            ..cfg.clone()
        };
        let (net, log) = train_phase2(&d, &d, &mask, &r.net, &p2).unwrap();
        assert_eq!(mask, before);
        assert_ne!(net, r.net);
        assert_eq!(log.len(), 2);
        assert!(train_phase2(&d, &d, &mask, &r.net, &cfg).is_err());
        assert!(train_phase1(&d, &d, &p2).is_err());
    }

    #[test]
    fn fixed_mask_has_exact_count_and_mode_structure() {
        let p = manual_density(3, 16, 16, 0.25).unwrap();
        let m = draw_fixed_mask(&p, PatternMode::Manual, 0.25, 4, &mut Rng::new(3)).unwrap();
        for j in 0..3 {
            assert_eq!(m.count(j), 64);
            assert_eq!(m.u.slab(j), m.u.slab(0));
        }
        let w = PatternWeights::zeros(3, 16, 16, 0.25, 0.25, PatternMode::PerEcho);
        let m = draw_fixed_mask(
            &build_prob_pattern(&w).unwrap(),
            PatternMode::PerEcho,
            0.25,
            4,
            &mut Rng::new(3),
        )
        .unwrap();
        assert!((0..3).all(|j| m.count(j) == 64));
        assert_ne!(m.u.slab(0), m.u.slab(1));
    }

    #[test]
    fn csv_layout() {
        let log = [
            EpochLog {
                epoch: 1,
                mean_loss: -0.5,
                val_loss: None,
            },
            EpochLog {
                epoch: 2,
                mean_loss: -0.75,
                val_loss: Some(-0.7),
            },
        ];
        assert_eq!(
            loss_csv(&log),
            "epoch,mean_loss,val_loss\n1,-0.5000000000,\n2,-0.7500000000,-0.7000000000\n"
        );
    }

    #[test]
    fn config_errors_name_the_field() {
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "batch_size"),
            other => panic!("{other:?}"),
        }
        let cfg = TrainConfig {
            kernel: 2,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
