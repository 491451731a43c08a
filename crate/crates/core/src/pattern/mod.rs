//! Sampling patterns: sigmoid + mean-renormalized probabilities from
//! learnable weights, Bernoulli binarization with a fully sampled
//! calibration block, straight-through gradients, and the fixed
//! multi-level variable-density baseline.

mod manual;
mod prob;
mod sampling;

pub use manual::{manual_vd_pattern, ManualVdConfig};
pub use prob::{
    build_prob_pattern, renorm, renorm_vjp, sigmoid, straight_through_grad, PatternWeights,
    ProbPattern,
};
pub use sampling::{calib_block, sample_binary, sample_fixed_count, sample_pattern, BinaryPattern};

use serde::{Deserialize, Serialize};

/// How sampling patterns relate across echoes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PatternMode {
    /// Hand-designed variable-density mask, the same for every echo.
    Manual,
    /// One learned pattern shared by all echoes.
    Shared,
    /// An independently learned pattern per echo.
    PerEcho,
}

impl PatternMode {
    pub fn spo(self) -> u8 {
        match self {
            PatternMode::Manual => 0,
            PatternMode::Shared => 1,
            PatternMode::PerEcho => 2,
        }
    }

    pub fn is_learned(self) -> bool {
        self != PatternMode::Manual
    }
}

impl TryFrom<u8> for PatternMode {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(PatternMode::Manual),
            1 => Ok(PatternMode::Shared),
            2 => Ok(PatternMode::PerEcho),
            other => Err(format!("spo must be 0, 1 or 2, got {other}")),
        }
    }
}

impl From<PatternMode> for u8 {
    fn from(m: PatternMode) -> u8 {
        m.spo()
    }
}

impl std::fmt::Display for PatternMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SPO={}", self.spo())
    }
}
