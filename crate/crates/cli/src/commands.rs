use std::path::{Path, PathBuf};

use mecs_core::experiment::{
    make_dataset, phantom_document, run_ablation, simulate, train_two_phase, ExperimentConfig,
};
use mecs_core::learn::{draw_fixed_mask, loss_csv, manual_density, SsimParams};
use mecs_core::pattern::{
    build_prob_pattern, manual_vd_pattern, sample_pattern, BinaryPattern, ManualVdConfig,
    PatternMode, PatternWeights, ProbPattern,
};
use mecs_core::quant::{
    compute_metrics, echo_combine, metrics_csv, metrics_json, quant_maps, write_pgm, NamedMetrics,
};
use mecs_core::recon::{admm_reconstruct, zero_filled_init, Denoiser, TffWeights};
use mecs_core::schedule::{build_schedule, encoding_jump_metric, shuffled_schedule, JumpStats};
use mecs_core::signal::{
    full_masks, generate_coils, generate_phantom, CoilSet, KSpaceData, MultiEchoImage,
};
use mecs_core::tensor::{read_tensor, write_tensor, AnyTensor};
use mecs_core::{write_atomic, ComplexTensor, Error, RealTensor, Result, Rng};

use crate::Command;

pub(crate) fn run(cmd: &Command, cfg: &ExperimentConfig) -> Result<()> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    eprintln!(
        "[mecs] command={} seed={} output={}",
        cmd.name(),
        cfg.seed,
        out.display()
    );
    let resolved = cfg.to_toml();
    eprintln!("[mecs] resolved config:\n{resolved}");
    write_atomic(
        &out.join(format!("{}.config.toml", cmd.name())),
        resolved.as_bytes(),
    )?;
    match cmd {
        Command::Phantom => phantom(cfg),
        Command::Pattern { weights } => pattern(cfg, weights.as_deref()),
        Command::Schedule { mask } => schedule(cfg, mask.as_deref()),
        Command::Train => train(cfg),
        Command::Recon {
            kspace,
            coils,
            mask,
        } => recon(cfg, kspace.as_deref(), coils.as_deref(), mask.as_deref()),
        Command::Eval {
            input,
            reference,
            threshold,
        } => eval(cfg, input, reference, *threshold),
        Command::Ablate => ablate(cfg),
    }
}

fn root(cfg: &ExperimentConfig) -> Rng {
    Rng::new(cfg.seed)
}

fn write_real(path: PathBuf, x: &RealTensor) -> Result<()> {
    write_tensor(&AnyTensor::Real(x.clone()), path)
}

fn write_complex(path: PathBuf, x: &ComplexTensor) -> Result<()> {
    write_tensor(&AnyTensor::Complex(x.clone()), path)
}

fn read_real(path: &Path, field: &str) -> Result<RealTensor> {
    read_tensor(path)?
        .into_real()
        .map_err(|e| Error::config(field, e.to_string()))
}

fn read_complex(path: &Path, field: &str) -> Result<ComplexTensor> {
    read_tensor(path)?
        .into_complex()
        .map_err(|e| Error::config(field, e.to_string()))
}

fn slab(x: &RealTensor, j: usize) -> RealTensor {
    let s = x.shape();
    RealTensor::from_vec(&[s[1], s[2]], x.slab(j).to_vec()).expect("slab shape")
}

fn peak(x: &RealTensor) -> f64 {
    x.data()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE)
}

fn coils_for(cfg: &ExperimentConfig, shape: [usize; 2]) -> Result<CoilSet> {
    generate_coils(cfg.n_coils, shape, root(cfg).split("coils").next_u64())
}

fn phantom(cfg: &ExperimentConfig) -> Result<()> {
    let out = &cfg.output_dir;
    let doc = phantom_document(cfg)?;
    let coils = coils_for(cfg, doc.spec.shape)?;
    let sample = simulate(
        &doc.spec,
        &doc.echo_times,
        &coils,
        root(cfg).split("noise").next_u64(),
    )?;
    let maps = generate_phantom(&doc.spec, &doc.echo_times)?.1;
    write_complex(out.join("truth.metf"), sample.truth.data())?;
    write_complex(out.join("kspace.metf"), sample.kspace.data())?;
    write_complex(out.join("coils.metf"), coils.maps())?;
    write_real(out.join("m0.metf"), &maps.m0)?;
    write_real(out.join("r2star.metf"), &maps.r2star)?;
    write_real(out.join("field.metf"), &maps.field)?;
    let json = serde_json::to_string_pretty(&doc).expect("phantom document serializes");
    write_atomic(&out.join("phantom.json"), json.as_bytes())?;
    let mag = echo_combine(&sample.truth);
    write_pgm(out.join("magnitude.pgm"), &mag, 0.0, peak(&mag))?;
    println!(
        "phantom {}x{}, {} echoes, {} coils, noise sigma {}",
        doc.spec.shape[0],
        doc.spec.shape[1],
        doc.echo_times.len(),
        cfg.n_coils,
        doc.spec.noise_sigma
    );
    Ok(())
}

/// The probabilistic pattern of the configured mode: the hand-designed
/// density in manual mode, otherwise the pattern of `weights` (all-zero
/// logits when absent).
fn prob_pattern(cfg: &ExperimentConfig, weights: Option<&Path>) -> Result<ProbPattern> {
    let mode = cfg.mode()?;
    let nt = cfg.n_echoes();
    let [ny, nz] = cfg.size;
    if mode == PatternMode::Manual {
        return manual_density(nt, ny, nz, cfg.gamma);
    }
    let w = match weights {
        Some(p) => {
            let w = read_real(p, "weights")?;
            if w.shape() != [nt, ny, nz] {
                return Err(Error::config(
                    "weights",
                    format!("shape {:?} does not match [{nt}, {ny}, {nz}]", w.shape()),
                ));
            }
            PatternWeights {
                w,
                slope: cfg.slope,
                gamma: cfg.gamma,
                mode,
            }
        }
        None => PatternWeights::zeros(nt, ny, nz, cfg.slope, cfg.gamma, mode),
    };
    build_prob_pattern(&w)
}

fn pattern(cfg: &ExperimentConfig, weights: Option<&Path>) -> Result<()> {
    let out = &cfg.output_dir;
    let mode = cfg.mode()?;
    let p = prob_pattern(cfg, weights)?;
    let mut rng = root(cfg).split("pattern");
    let mask = if mode == PatternMode::Manual {
        manual_vd_pattern(
            cfg.n_echoes(),
            cfg.size,
            cfg.gamma,
            ManualVdConfig::default(),
            &mut rng,
        )?
    } else {
        sample_pattern(&p, mode, &mut rng, cfg.calib_size)?
    };
    write_real(out.join("prob.metf"), &p.p)?;
    write_real(out.join("mask.metf"), &mask.u)?;
    for j in 0..cfg.n_echoes() {
        write_pgm(
            out.join(format!("density_echo{}.pgm", j + 1)),
            &slab(&p.p, j),
            0.0,
            1.0,
        )?;
        write_pgm(
            out.join(format!("mask_echo{}.pgm", j + 1)),
            &slab(&mask.u, j),
            0.0,
            1.0,
        )?;
    }
    for j in 0..cfg.n_echoes() {
        let mean_p = p.p.slab(j).iter().sum::<f64>() / p.p.slab_len() as f64;
        println!(
            "echo {}: mean P {:.6}, sampled {} ({:.4})",
            j + 1,
            mean_p,
            mask.count(j),
            mask.count(j) as f64 / p.p.slab_len() as f64
        );
    }
    Ok(())
}

fn jump_json(s: &JumpStats) -> serde_json::Value {
    serde_json::json!({
        "intra_mean": s.intra_mean,
        "intra_max": s.intra_max,
        "inter_mean": s.inter_mean,
        "inter_max": s.inter_max,
    })
}

fn schedule(cfg: &ExperimentConfig, mask: Option<&Path>) -> Result<()> {
    let out = &cfg.output_dir;
    let masks = match mask {
        Some(p) => {
            let u = read_real(p, "mask")?;
            if u.ndim() != 3 || u.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::config(
                    "mask",
                    "expected a binary [echoes, ny, nz] tensor",
                ));
            }
            BinaryPattern {
                u,
                calib_size: cfg.calib_size,
            }
        }
        None => draw_fixed_mask(
            &prob_pattern(cfg, None)?,
            cfg.mode()?,
            cfg.gamma,
            cfg.calib_size,
            &mut root(cfg).split("pattern"),
        )?,
    };
    let s = build_schedule(&masks, cfg.n_segments)?;
    let random = shuffled_schedule(&masks, &mut root(cfg).split("shuffle"))?;
    let text = s.to_text();
    write_atomic(&out.join("schedule.txt"), text.as_bytes())?;
    let report = serde_json::json!({
        "n_segments": s.n_segments(),
        "n_ind": s.n_ind(),
        "n_tr": s.n_tr(),
        "n_echoes": s.n_echoes(),
        "segment_sizes": s.segment_sizes,
        "centric": jump_json(&encoding_jump_metric(&s)),
        "random": jump_json(&encoding_jump_metric(&random)),
    });
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&out.join("schedule_jumps.json"), json.as_bytes())?;
    println!("{}", text.lines().next().unwrap_or_default());
    println!("{json}");
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let out = &cfg.output_dir;
    let data = make_dataset(cfg, root(cfg).split("data").next_u64())?;
    let seed = root(cfg).split("train").next_u64();
    let t = train_two_phase(cfg, &data, cfg.mode()?, cfg.variant(), seed)?;
    write_atomic(
        &out.join("loss_phase1.csv"),
        loss_csv(&t.phase1.log).as_bytes(),
    )?;
    write_atomic(
        &out.join("loss_phase2.csv"),
        loss_csv(&t.phase2_log).as_bytes(),
    )?;
    write_real(out.join("pattern_weights.metf"), &t.phase1.pattern.w)?;
    write_real(out.join("mask.metf"), &t.mask.u)?;
    t.phase1.net.save(out.join("net_phase1"))?;
    t.net.save(out.join("net"))?;
    for e in t.phase1.log.iter().chain(&t.phase2_log) {
        println!("epoch {:3}  loss {:.6}", e.epoch, e.mean_loss);
    }
    Ok(())
}

fn denoiser(cfg: &ExperimentConfig) -> Result<Denoiser> {
    Ok(match cfg.admm.denoiser.as_str() {
        "identity" => Denoiser::Identity,
        "llr" => Denoiser::Llr {
            patch: cfg.llr.patch,
            lambda: cfg.llr.lambda,
        },
        _ => {
            let dir = cfg
                .admm
                .weights
                .as_ref()
                .ok_or_else(|| Error::config("admm.weights", "required by the tff denoiser"))?;
            Denoiser::from_network(TffWeights::load(dir)?, cfg.variant())
        }
    })
}

fn recon(
    cfg: &ExperimentConfig,
    kspace: Option<&Path>,
    coils: Option<&Path>,
    mask: Option<&Path>,
) -> Result<()> {
    let out = &cfg.output_dir;
    let (b, coil_set, truth) = match (kspace, coils) {
        (Some(k), Some(c)) => {
            let b = KSpaceData::new(read_complex(k, "kspace")?, cfg.echo_times.clone())
                .map_err(|e| Error::config("kspace", e.to_string()))?;
            let coils = CoilSet::new(read_complex(c, "coils")?)
                .map_err(|e| Error::config("coils", e.to_string()))?;
            (b, coils, None)
        }
        _ => {
            let doc = phantom_document(cfg)?;
            let coils = coils_for(cfg, doc.spec.shape)?;
            let s = simulate(
                &doc.spec,
                &doc.echo_times,
                &coils,
                root(cfg).split("noise").next_u64(),
            )?;
            (s.kspace, coils, Some(s.truth))
        }
    };
    let (ny, nz) = b.dims();
    let nt = b.n_echoes();
    let u = match mask {
        Some(p) => read_real(p, "mask")?,
        None if truth.is_some() => {
            draw_fixed_mask(
                &prob_pattern(cfg, None)?,
                cfg.mode()?,
                cfg.gamma,
                cfg.calib_size,
                &mut root(cfg).split("pattern"),
            )?
            .u
        }
        None => full_masks(nt, ny, nz),
    };
    let b = b
        .masked(&u)
        .map_err(|e| Error::config("mask", e.to_string()))?;
    let x = admm_reconstruct(&b, &coil_set, &u, &cfg.admm_config(denoiser(cfg)?))?;
    let zf = zero_filled_init(&b, &coil_set, &u)?;
    write_complex(out.join("recon.metf"), x.data())?;
    write_complex(out.join("zero_filled.metf"), zf.data())?;
    write_real(out.join("mask.metf"), &u)?;
    let mag = echo_combine(&x);
    write_pgm(out.join("recon_magnitude.pgm"), &mag, 0.0, peak(&mag))?;
    println!(
        "reconstructed {nt} echoes on {ny}x{nz} with the {} denoiser",
        cfg.admm.denoiser
    );
    if let Some(t) = truth {
        write_complex(out.join("truth.metf"), t.data())?;
        let r = echo_combine(&t);
        let params = SsimParams::default();
        let m = compute_metrics(&mag, &r, &params)?;
        let z = compute_metrics(&echo_combine(&zf), &r, &params)?;
        println!("recon       psnr {:.3} dB  ssim {:.4}", m.psnr, m.ssim);
        println!("zero-filled psnr {:.3} dB  ssim {:.4}", z.psnr, z.ssim);
    }
    Ok(())
}

fn eval(cfg: &ExperimentConfig, input: &Path, reference: &Path, threshold: f64) -> Result<()> {
    let out = &cfg.output_dir;
    let image = |p: &Path, field: &str| -> Result<MultiEchoImage> {
        MultiEchoImage::new(read_complex(p, field)?, cfg.echo_times.clone())
            .map_err(|e| Error::config(field, e.to_string()))
    };
    let x = image(input, "input")?;
    let r = image(reference, "reference")?;
    if x.data().shape() != r.data().shape() {
        return Err(Error::config("input", "input and reference shapes differ"));
    }
    let qx = quant_maps(&x, threshold)?;
    let qr = quant_maps(&r, threshold)?;
    let params = SsimParams::default();
    // fitted maps are compared where the reference fit is valid
    let masked = |m: &RealTensor, valid: &[bool]| {
        let data = m
            .data()
            .iter()
            .zip(valid)
            .map(|(&v, &ok)| if ok { v } else { 0.0 })
            .collect();
        RealTensor::from_vec(m.shape(), data).expect("same shape")
    };
    let pairs = [
        ("magnitude", qx.magnitude.clone(), qr.magnitude.clone()),
        (
            "r2star",
            masked(&qx.r2star.values, &qr.r2star.valid),
            masked(&qr.r2star.values, &qr.r2star.valid),
        ),
        (
            "field",
            masked(&qx.field.values, &qr.field.valid),
            masked(&qr.field.values, &qr.field.valid),
        ),
    ];
    let mut rows = Vec::new();
    for (name, a, b) in &pairs {
        if b.data().iter().all(|&v| v == 0.0) {
            eprintln!("[mecs] skipping {name}: reference map is identically zero");
            continue;
        }
        rows.push(NamedMetrics {
            name: name.to_string(),
            report: compute_metrics(a, b, &params)?,
        });
    }
    write_atomic(&out.join("metrics.csv"), metrics_csv(&rows).as_bytes())?;
    write_atomic(&out.join("metrics.json"), metrics_json(&rows).as_bytes())?;
    write_pgm(
        out.join("eval_magnitude.pgm"),
        &qx.magnitude,
        0.0,
        peak(&qr.magnitude),
    )?;
    write_pgm(
        out.join("eval_r2star.pgm"),
        &qx.r2star.values,
        0.0,
        peak(&qr.r2star.values),
    )?;
    let f = peak(&qr.field.values);
    write_pgm(out.join("eval_field.pgm"), &qx.field.values, -f, f)?;
    print!("{}", metrics_csv(&rows));
    Ok(())
}

fn ablate(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_ablation(cfg)?;
    report.write(&cfg.output_dir)?;
    print!("{}", report.table_csv());
    Ok(())
}
