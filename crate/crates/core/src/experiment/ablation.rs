use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::dataset::{make_dataset, Dataset};
use crate::error::{Error, Result};
use crate::learn::{
    draw_fixed_mask, final_density, train_phase1, train_phase2, EpochLog, Phase1Result, Sample,
    SsimParams,
};
use crate::pattern::{BinaryPattern, PatternMode};
use crate::quant::{compute_metrics, echo_combine, psnr};
use crate::recon::{
    admm_reconstruct, zero_filled_init, AdmmConfig, Denoiser, TffVariant, TffWeights,
};
use crate::tensor::{RealTensor, Rng};
use crate::write_atomic;

/// `(tff, spo)` cells in table order.
pub const GRID: [(u8, u8); 6] = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)];

/// Test-set means on the echo-combined magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub zf_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub tff: u8,
    pub spo: u8,
    pub seed: u64,
    pub first_loss: f64,
    pub last_loss: f64,
    pub metrics: TestMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub tff: u8,
    pub spo: u8,
    pub psnr: f64,
    pub psnr_std: f64,
    pub ssim: f64,
    pub zf_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub runs: Vec<CellResult>,
}

/// Reconstructs every test sample under `mask` and averages PSNR and SSIM
/// of the echo-combined magnitude against the truth, alongside the
/// zero-filled PSNR under the same mask.
pub fn evaluate(test: &[Sample], mask: &RealTensor, admm: &AdmmConfig) -> Result<TestMetrics> {
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let per: Vec<(f64, f64, f64)> = test
        .par_iter()
        .map(|s| {
            let b = s.kspace.masked(mask)?;
            let truth = echo_combine(&s.truth);
            let x = echo_combine(&admm_reconstruct(&b, &s.coils, mask, admm)?);
            let zf = echo_combine(&zero_filled_init(&b, &s.coils, mask)?);
            let m = compute_metrics(&x, &truth, &SsimParams::default())?;
            Ok((m.psnr, m.ssim, psnr(&zf, &truth)?))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok(TestMetrics {
        psnr: per.iter().map(|p| p.0).sum::<f64>() / n,
        ssim: per.iter().map(|p| p.1).sum::<f64>() / n,
        zf_psnr: per.iter().map(|p| p.2).sum::<f64>() / n,
    })
}

/// Both training phases for one grid cell, then the test evaluation under
/// the final fixed mask.
pub fn run_cell(
    cfg: &ExperimentConfig,
    data: &Dataset,
    tff: u8,
    spo: u8,
    seed: u64,
) -> Result<CellResult> {
    let mode = PatternMode::try_from(spo).map_err(|_| Error::config("spo", "must be 0, 1 or 2"))?;
    let variant = if tff == 1 {
        TffVariant::Recurrent
    } else {
        TffVariant::Ablated
    };
    let t = train_two_phase(cfg, data, mode, variant, seed)?;
    let first_loss = t.phase1.log.first().map_or(f64::NAN, |e| e.mean_loss);
    let last_loss = t.phase1.log.last().map_or(f64::NAN, |e| e.mean_loss);
    let metrics = evaluate(
        &data.test,
        &t.mask.u,
        &cfg.admm_config(Denoiser::from_network(t.net, variant)),
    )?;
    Ok(CellResult {
        tff,
        spo,
        seed,
        first_loss,
        last_loss,
        metrics,
    })
}

/// Outcome of both training phases for one pattern mode and fusion variant.
#[derive(Clone, Debug)]
pub struct TwoPhaseResult {
    pub phase1: Phase1Result,
    /// The frozen mask of phase 2, also used at test time.
    pub mask: BinaryPattern,
    pub net: TffWeights,
    pub phase2_log: Vec<EpochLog>,
}

/// Phase 1, then a fixed mask with exactly `gamma ny nz` samples per echo
/// (the manual mask itself in manual mode), then phase 2 under that mask.
pub fn train_two_phase(
    cfg: &ExperimentConfig,
    data: &Dataset,
    mode: PatternMode,
    variant: TffVariant,
    seed: u64,
) -> Result<TwoPhaseResult> {
    let c1 = cfg.train_config(1, mode, variant, seed);
    let phase1 = train_phase1(&data.train, &data.val, &c1)?;
    let mask = match &phase1.manual_mask {
        Some(m) => m.clone(),
        None => draw_fixed_mask(
            &final_density(&phase1, &c1)?,
            mode,
            cfg.gamma,
            cfg.calib_size,
            &mut Rng::new(seed).split("final-mask"),
        )?,
    };
    let (net, phase2_log) = if cfg.train.phase2_epochs > 0 {
        let c2 = cfg.train_config(2, mode, variant, seed);
        train_phase2(&data.train, &data.val, &mask, &phase1.net, &c2)?
    } else {
        (phase1.net.clone(), Vec::new())
    };
    Ok(TwoPhaseResult {
        phase1,
        mask,
        net,
        phase2_log,
    })
}

/// Every grid cell for every configured seed. A seed fixes the dataset and
/// the training randomness shared by all six cells.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let work = || -> Result<AblationReport> {
        let seeds: Vec<(u64, u64, u64)> = cfg
            .ablation
            .seeds
            .iter()
            .map(|&s| {
                (
                    s,
                    root.split_index("data", s).next_u64(),
                    root.split_index("train", s).next_u64(),
                )
            })
            .collect();
        let data: Vec<Dataset> = seeds
            .par_iter()
            .map(|&(_, d, _)| make_dataset(cfg, d))
            .collect::<Result<_>>()?;
        let jobs: Vec<(usize, u8, u8)> = (0..seeds.len())
            .flat_map(|i| GRID.iter().map(move |&(t, s)| (i, t, s)))
            .collect();
        let runs: Vec<CellResult> = jobs
            .par_iter()
            .map(|&(i, t, s)| {
                let mut r = run_cell(cfg, &data[i], t, s, seeds[i].2)?;
                r.seed = seeds[i].0;
                Ok(r)
            })
            .collect::<Result<_>>()?;
        Ok(AblationReport { runs })
    };
    if cfg.ablation.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.ablation.threads)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?
            .install(work)
    } else {
        work()
    }
}

impl AblationReport {
    /// Mean over seeds per cell, best PSNR first.
    pub fn table(&self) -> Vec<TableRow> {
        let mut rows: Vec<TableRow> = GRID
            .iter()
            .filter_map(|&(tff, spo)| {
                let cell: Vec<&CellResult> = self
                    .runs
                    .iter()
                    .filter(|r| r.tff == tff && r.spo == spo)
                    .collect();
                if cell.is_empty() {
                    return None;
                }
                let n = cell.len() as f64;
                let mean =
                    |f: &dyn Fn(&CellResult) -> f64| cell.iter().map(|r| f(r)).sum::<f64>() / n;
                let psnr = mean(&|r| r.metrics.psnr);
                let var = mean(&|r| (r.metrics.psnr - psnr).powi(2));
                Some(TableRow {
                    tff,
                    spo,
                    psnr,
                    psnr_std: var.sqrt(),
                    ssim: mean(&|r| r.metrics.ssim),
                    zf_psnr: mean(&|r| r.metrics.zf_psnr),
                })
            })
            .collect();
        rows.sort_by(|a, b| {
            b.psnr
                .total_cmp(&a.psnr)
                .then((a.tff, a.spo).cmp(&(b.tff, b.spo)))
        });
        rows
    }

    pub fn row(&self, tff: u8, spo: u8) -> Option<TableRow> {
        self.table()
            .into_iter()
            .find(|r| r.tff == tff && r.spo == spo)
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from("tff,spo,seed,first_loss,last_loss,psnr,ssim,zf_psnr\n");
        for r in &self.runs {
            s.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.4},{:.6},{:.4}\n",
                r.tff,
                r.spo,
                r.seed,
                r.first_loss,
                r.last_loss,
                r.metrics.psnr,
                r.metrics.ssim,
                r.metrics.zf_psnr
            ));
        }
        s
    }

    pub fn table_csv(&self) -> String {
        let mut s = String::from("rank,tff,spo,psnr,psnr_std,ssim,zf_psnr\n");
        for (i, r) in self.table().iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.6},{:.4}\n",
                i + 1,
                r.tff,
                r.spo,
                r.psnr,
                r.psnr_std,
                r.ssim,
                r.zf_psnr
            ));
        }
        s
    }

    /// `ablation_runs.csv` and `ablation_table.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("ablation_runs.csv"), self.runs_csv().as_bytes())?;
        write_atomic(&dir.join("ablation_table.csv"), self.table_csv().as_bytes())
    }
}
