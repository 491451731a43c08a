//! Simulation, learned k-space under-sampling, unrolled ADMM reconstruction
//! and quantitative evaluation for accelerated multi-echo gradient-echo MRI.
//!
//! Module map:
//!
//! * [`tensor`]: dense tensors, centered FFTs, METF files, seeded RNG
//! * [`signal`]: phantoms, coil maps, the multi-coil encoding operator
//! * [`pattern`]: probabilistic and binary sampling patterns
//! * [`schedule`]: segmented centric acquisition ordering
//! * [`recon`]: unrolled plug-and-play ADMM with identity, LLR and
//!   recurrent convolutional denoisers
//! * [`learn`]: reverse-mode differentiation, SSIM loss, Adam, training
//! * [`quant`]: echo combination, R2* and field fits, image metrics
//! * [`experiment`]: configs, synthetic datasets and the ablation grid

pub mod error;
pub mod experiment;
pub mod learn;
pub mod pattern;
pub mod quant;
pub mod recon;
pub mod schedule;
pub mod signal;
pub mod tensor;

mod io_util;

pub use error::{Error, Result};
pub use io_util::write_atomic;
pub use signal::{CoilSet, KSpaceData, MultiEchoImage};
pub use tensor::{AnyTensor, Complex64, ComplexTensor, RealTensor, Rng, Tensor};
