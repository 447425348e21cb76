//! Dense row-major f64 tensor. All shapes in this crate are at most 2-D.

use crate::error::{Error, Result};

/// Row-major dense tensor of 64-bit floats.
///
/// Invariants: `data.len() == shape.iter().product()`, every dimension is
/// positive, and every entry is finite (NaN/Inf are rejected at construction).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {numel} entries, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite tensor entry {bad}")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![v])
    }

    /// Column vector `[n, 1]`.
    pub fn col(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n, 1], data)
    }

    /// Matrix `[rows, cols]` from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (rows, cols) view; 1-D tensors count as a single column.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (self.shape[0], 1),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }
}
