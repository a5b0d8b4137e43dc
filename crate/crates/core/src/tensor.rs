use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` and is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(shape_err("Tensor::new", &[len], &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Anything that exposes its trainable tensors in a fixed order.
///
/// The order must be stable across calls and identical between a value and
/// its gradient container, since optimizers and gradient checks zip them.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| t.shape().to_vec()).collect()
    }

    /// Flat read of parameter `index` across all tensors.
    fn get_flat(&self, mut index: usize) -> f64 {
        for t in self.tensors() {
            if index < t.len() {
                return t.data()[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in self.tensors_mut() {
            if index < t.len() {
                t.data_mut()[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}
