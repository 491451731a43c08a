use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{TrainConfig, Unroll};
use crate::pattern::PatternMode;
use crate::recon::{AdmmConfig, Denoiser, TffVariant};

/// One experiment: data simulation, sampling, reconstruction and training
/// settings. Every field has a default so partial documents are valid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// JSON phantom document; the Shepp-Logan phantom at `size` when absent.
    pub phantom: Option<PathBuf>,
    pub size: [usize; 2],
    /// Seconds.
    pub echo_times: Vec<f64>,
    pub n_coils: usize,
    /// Per-component std of the complex k-space noise.
    pub noise_sigma: f64,
    pub gamma: f64,
    /// 0 manual, 1 shared learned, 2 per-echo learned.
    pub spo: u8,
    /// Sigmoid slope of the probabilistic pattern.
    pub slope: f64,
    pub calib_size: usize,
    /// Recurrent fusion on (1) or the non-recurrent feature extractor (0).
    pub tff: u8,
    /// Segments of the acquisition schedule.
    pub n_segments: usize,
    pub admm: AdmmSection,
    pub llr: LlrSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub ablation: AblationSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmSection {
    pub n_unrolled: usize,
    pub rho: f64,
    pub cg_iters: usize,
    /// identity, llr or tff (the trained network from `weights`).
    pub denoiser: String,
    pub weights: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlrSection {
    pub patch: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub phase2_epochs: usize,
    pub lr: f64,
    pub pattern_lr: f64,
    /// Per-epoch step-size factor; phase 2 continues from where phase 1 ends.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub width: usize,
    pub n_layers: usize,
    pub kernel: usize,
    pub init_noise: f64,
    pub ssim_window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
    /// Worker threads for the grid; 0 uses the global pool.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            output_dir: PathBuf::from("out"),
            phantom: None,
            size: [64, 64],
            echo_times: crate::signal::uniform_echo_times(4, 0.004, 0.004),
            n_coils: 4,
            noise_sigma: 0.0,
            gamma: 0.25,
            spo: 2,
            slope: 0.25,
            calib_size: 8,
            tff: 1,
            n_segments: 11,
            admm: AdmmSection::default(),
            llr: LlrSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

impl Default for AdmmSection {
    fn default() -> Self {
        AdmmSection {
            n_unrolled: 10,
            rho: 1.0,
            cg_iters: 10,
            denoiser: "llr".into(),
            weights: None,
        }
    }
}

impl Default for LlrSection {
    fn default() -> Self {
        LlrSection {
            patch: 8,
            lambda: 0.05,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            phase2_epochs: 5,
            lr: t.lr,
            pattern_lr: t.pattern_lr,
            lr_decay: t.lr_decay,
            batch_size: t.batch_size,
            hidden: t.hidden,
            width: t.width,
            n_layers: t.n_layers,
            kernel: t.kernel,
            init_noise: t.init_noise,
            ssim_window: t.ssim_window,
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n_train: 20,
            n_val: 2,
            n_test: 5,
        }
    }
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            seeds: vec![1, 2, 3],
            threads: 0,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::config(field, message)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| invalid("config", e.message().to_string()))?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from the defaults) and applies `key=value`
    /// overrides, where `key` is a dotted path and `value` a TOML literal or
    /// a bare string.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse()
                    .map_err(|e: toml::de::Error| invalid("config", e.message().to_string()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| invalid("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mode(&self) -> Result<PatternMode> {
        PatternMode::try_from(self.spo).map_err(|_| invalid("spo", "must be 0, 1 or 2"))
    }

    pub fn variant(&self) -> TffVariant {
        if self.tff == 1 {
            TffVariant::Recurrent
        } else {
            TffVariant::Ablated
        }
    }

    pub fn n_echoes(&self) -> usize {
        self.echo_times.len()
    }

    pub fn unroll(&self) -> Unroll {
        Unroll {
            n_unrolled: self.admm.n_unrolled,
            rho: self.admm.rho,
            cg_iters: self.admm.cg_iters,
        }
    }

    pub fn admm_config(&self, denoiser: Denoiser) -> AdmmConfig {
        self.unroll().admm_config(denoiser)
    }

    /// Training settings for `phase` with the given pattern mode, fusion
    /// variant and seed.
    pub fn train_config(
        &self,
        phase: u8,
        mode: PatternMode,
        variant: TffVariant,
        seed: u64,
    ) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            phase,
            epochs: if phase == 1 {
                t.epochs
            } else {
                t.phase2_epochs
            },
            lr: if phase == 1 {
                t.lr
            } else {
                t.lr * t.lr_decay.powi(t.epochs as i32)
            },
            pattern_lr: t.pattern_lr,
            lr_decay: t.lr_decay,
            batch_size: t.batch_size,
            mode,
            gamma: self.gamma,
            slope: self.slope,
            calib_size: self.calib_size,
            variant,
            hidden: t.hidden,
            width: t.width,
            n_layers: t.n_layers,
            kernel: t.kernel,
            init_noise: t.init_noise,
            unroll: self.unroll(),
            ssim_window: t.ssim_window,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [ny, nz] = self.size;
        if ny == 0 || nz == 0 {
            return Err(invalid("size", "grid extents must be positive"));
        }
        crate::signal::validate_echo_times(&self.echo_times)
            .map_err(|e| invalid("echo_times", e.to_string()))?;
        if self.n_coils == 0 {
            return Err(invalid("n_coils", "must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid("noise_sigma", "must be finite and non-negative"));
        }
        self.mode()?;
        if self.tff > 1 {
            return Err(invalid("tff", "must be 0 or 1"));
        }
        if self.calib_size > ny.min(nz) {
            return Err(invalid("calib_size", "exceeds the grid"));
        }
        if self.n_segments == 0 {
            return Err(invalid("n_segments", "must be positive"));
        }
        if let Some(p) = &self.phantom {
            if !p.is_file() {
                return Err(invalid(
                    "phantom",
                    format!("{} does not exist", p.display()),
                ));
            }
        }
        match self.admm.denoiser.as_str() {
            "identity" | "llr" => {}
            "tff" => match &self.admm.weights {
                Some(p) if p.is_dir() => {}
                Some(p) => {
                    return Err(invalid(
                        "admm.weights",
                        format!("{} is not a directory", p.display()),
                    ))
                }
                None => return Err(invalid("admm.weights", "required by the tff denoiser")),
            },
            other => {
                return Err(invalid(
                    "admm.denoiser",
                    format!("unknown denoiser `{other}` (identity, llr, tff)"),
                ))
            }
        }
        if self.llr.patch == 0 {
            return Err(invalid("llr.patch", "must be positive"));
        }
        if !(self.llr.lambda >= 0.0 && self.llr.lambda.is_finite()) {
            return Err(invalid("llr.lambda", "must be finite and non-negative"));
        }
        self.admm_config(Denoiser::Identity)
            .validate()
            .map_err(|e| invalid("admm", e.to_string()))?;
        let tc = self.train_config(1, self.mode()?, self.variant(), self.seed);
        tc.validate().map_err(|e| match e {
            Error::Config { field, message } => {
                let name = match field.as_str() {
                    "gamma" | "slope" => field,
                    f => match f.strip_prefix("unroll.") {
                        Some(rest) => format!("admm.{rest}"),
                        None => format!("train.{f}"),
                    },
                };
                invalid(&name, message)
            }
            other => other,
        })?;
        if self.data.n_train == 0 {
            return Err(invalid("data.n_train", "must be positive"));
        }
        if self.data.n_test == 0 {
            return Err(invalid("data.n_test", "must be positive"));
        }
        if self.ablation.seeds.is_empty() {
            return Err(invalid("ablation.seeds", "at least one seed is required"));
        }
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| invalid(item, "override must have the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(key, "empty key segment"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("`{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
