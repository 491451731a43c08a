//! Reverse-mode differentiation of the reconstruction pipeline, the SSIM
//! loss, Adam and the two-phase training procedure.

mod adam;
mod gradcheck;
mod graph;
mod model;
mod ssim;
mod train;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{Grads, Graph, ImageDims, Var};
pub use model::{
    denoise, forward_image, loss_and_grad, loss_only, pattern_grad, surrogate_mask,
    unrolled_forward, LossGrad, LossSpec, NetVars, Sample, Unroll,
};
pub use ssim::{ssim_map, ssim_slices, ssim_with_grad, SsimParams};
pub use train::{
    draw_fixed_mask, final_density, loss_csv, manual_density, mean_loss, train_phase1,
    train_phase2, EpochLog, Phase1Result, TrainConfig,
};
