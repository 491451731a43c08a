//! Dense row-major tensors, centered FFTs, the METF file format and the
//! seeded random source shared by the rest of the crate.

mod fft;
mod io;
mod rng;

pub use fft::{fft2_centered_inplace, fft_centered, ifft2_centered_inplace, ifft_centered};
pub use io::{read_tensor, write_tensor, AnyTensor, DType, METF_MAGIC, METF_VERSION};
pub use rng::Rng;

use crate::error::{ensure, Result};
pub use num_complex::Complex64;

/// Row-major dense tensor. `shape` extents are all >= 1 and their product is
/// the length of `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type RealTensor = Tensor<f64>;
pub type ComplexTensor = Tensor<Complex64>;

impl<T: Clone + Default> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = checked_len(shape).expect("invalid tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::default(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = checked_len(shape).expect("invalid tensor shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }
}

impl<T> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = checked_len(shape)?;
        ensure(n == data.len(), || {
            format!("shape {:?} needs {} elements, got {}", shape, n, data.len())
        })?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Number of elements in one slab along axis 0.
    pub fn slab_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn slab(&self, i: usize) -> &[T] {
        let n = self.slab_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn slab_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.slab_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl RealTensor {
    pub fn to_complex(&self) -> ComplexTensor {
        self.map(|&v| Complex64::new(v, 0.0))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl ComplexTensor {
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Hermitian inner product `sum(conj(self) * other)`.
    pub fn inner(&self, other: &ComplexTensor) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn abs(&self) -> RealTensor {
        self.map(|z| z.norm())
    }

    pub fn re(&self) -> RealTensor {
        self.map(|z| z.re)
    }

    pub fn im(&self) -> RealTensor {
        self.map(|z| z.im)
    }
}

pub(crate) fn checked_len(shape: &[usize]) -> Result<usize> {
    ensure(!shape.is_empty(), || {
        "tensor needs at least one axis".into()
    })?;
    ensure(shape.iter().all(|&d| d >= 1), || {
        format!("tensor extents must be >= 1, got {shape:?}")
    })?;
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| crate::Error::invalid(format!("shape {shape:?} overflows")))
}
