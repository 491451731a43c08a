use std::path::Path;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::learn::Sample;
use crate::signal::{
    add_noise, encode, full_masks, generate_coils, generate_phantom, CoilSet, PhantomDocument,
    PhantomSpec,
};
use crate::tensor::Rng;

/// Synthetic train/validation/test split sharing one coil set.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub coils: CoilSet,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Reads a JSON phantom document.
pub fn read_phantom(path: &Path) -> Result<PhantomDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: PhantomDocument =
        serde_json::from_str(&text).map_err(|e| Error::config("phantom", e.to_string()))?;
    doc.spec.validate()?;
    crate::signal::validate_echo_times(&doc.echo_times)?;
    Ok(doc)
}

/// The configured phantom document, or Shepp-Logan on the configured grid.
pub fn phantom_document(cfg: &ExperimentConfig) -> Result<PhantomDocument> {
    match &cfg.phantom {
        Some(p) => read_phantom(p),
        None => Ok(PhantomDocument {
            echo_times: cfg.echo_times.clone(),
            spec: PhantomSpec {
                noise_sigma: cfg.noise_sigma,
                ..PhantomSpec::shepp_logan(cfg.size)
            },
        }),
    }
}

/// Noiseless truth and noisy fully sampled k-space of `spec`.
pub fn simulate(
    spec: &PhantomSpec,
    echo_times: &[f64],
    coils: &CoilSet,
    noise_seed: u64,
) -> Result<Sample> {
    let truth = generate_phantom(spec, echo_times)?.0;
    let [ny, nz] = spec.shape;
    let full = full_masks(echo_times.len(), ny, nz);
    let clean = encode(&truth, coils, &full)?;
    let kspace = add_noise(&clean, spec.noise_sigma, noise_seed, &full)?;
    Ok(Sample {
        kspace,
        coils: coils.clone(),
        truth,
    })
}

/// Randomly perturbed phantoms drawn from `seed`.
pub fn make_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let root = Rng::new(seed).split("dataset");
    let coils = generate_coils(cfg.n_coils, cfg.size, root.split("coils").next_u64())?;
    let split = |name: &str, n: usize| -> Result<Vec<Sample>> {
        (0..n)
            .map(|i| {
                let mut rng = root.split_index(name, i as u64);
                let spec = PhantomSpec {
                    noise_sigma: cfg.noise_sigma,
                    ..PhantomSpec::random(cfg.size, &mut rng)
                };
                simulate(&spec, &cfg.echo_times, &coils, rng.next_u64())
            })
            .collect()
    };
    Ok(Dataset {
        train: split("train", cfg.data.n_train)?,
        val: split("val", cfg.data.n_val)?,
        test: split("test", cfg.data.n_test)?,
        coils,
    })
}
