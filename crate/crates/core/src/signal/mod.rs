//! Multi-echo gradient-echo signal simulation and the multi-coil encoding
//! operator `b[j,k] = U_j F (E_k s_j)` with its adjoint.

mod coils;
pub(crate) mod encoding;
mod phantom;

pub use coils::{generate_coils, CoilSet};
pub use encoding::{add_noise, adjoint, encode, full_masks, noise_sigma_for_snr, KSpaceData};
pub use phantom::{generate_phantom, Ellipse, PhantomDocument, PhantomSpec, TissueMaps};

use crate::error::{ensure, Result};
use crate::tensor::ComplexTensor;

/// Complex image stack `[n_echoes, ny, nz]` with its echo times in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiEchoImage {
    data: ComplexTensor,
    echo_times: Vec<f64>,
}

impl MultiEchoImage {
    pub fn new(data: ComplexTensor, echo_times: Vec<f64>) -> Result<Self> {
        ensure(data.ndim() == 3, || {
            format!("multi-echo image must be 3-d, got {:?}", data.shape())
        })?;
        ensure(data.shape()[0] == echo_times.len(), || {
            format!(
                "{} echo slabs but {} echo times",
                data.shape()[0],
                echo_times.len()
            )
        })?;
        validate_echo_times(&echo_times)?;
        Ok(MultiEchoImage { data, echo_times })
    }

    pub fn zeros(n_echoes: usize, ny: usize, nz: usize, echo_times: Vec<f64>) -> Result<Self> {
        Self::new(ComplexTensor::zeros(&[n_echoes, ny, nz]), echo_times)
    }

    pub fn data(&self) -> &ComplexTensor {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut ComplexTensor {
        &mut self.data
    }

    pub fn into_data(self) -> ComplexTensor {
        self.data
    }

    pub fn echo_times(&self) -> &[f64] {
        &self.echo_times
    }

    pub fn n_echoes(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }

    /// Same echo times, new pixel data of identical shape.
    pub fn with_data(&self, data: ComplexTensor) -> Result<Self> {
        ensure(data.shape() == self.data.shape(), || {
            format!("shape {:?} != {:?}", data.shape(), self.data.shape())
        })?;
        Ok(MultiEchoImage {
            data,
            echo_times: self.echo_times.clone(),
        })
    }
}

pub fn validate_echo_times(echo_times: &[f64]) -> Result<()> {
    ensure(!echo_times.is_empty(), || "need at least one echo".into())?;
    ensure(echo_times.iter().all(|&t| t > 0.0 && t.is_finite()), || {
        "echo times must be positive".into()
    })?;
    ensure(echo_times.windows(2).all(|w| w[1] > w[0]), || {
        "echo times must be strictly increasing".into()
    })
}

/// `first + j * spacing` for `j = 0..n`.
pub fn uniform_echo_times(n: usize, first: f64, spacing: f64) -> Vec<f64> {
    (0..n).map(|j| first + j as f64 * spacing).collect()
}
