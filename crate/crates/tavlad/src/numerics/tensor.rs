//! Dense row-major f64 tensor.

use crate::error::{Error, Result};

/// A dense tensor of 64-bit floats in row-major order.
///
/// `dims` holds the extent of each axis and `data.len()` always equals the
/// product of the extents. Tensors are plain values; operations never mutate
/// their inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from explicit dims and data.
    ///
    /// Panics if `data.len()` does not match the product of `dims`; that is a
    /// programming error, not a runtime condition.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Self {
        let expect: usize = dims.iter().product();
        assert_eq!(
            data.len(),
            expect,
            "tensor data length {} does not match dims {:?}",
            data.len(),
            dims
        );
        Tensor { dims, data }
    }

    /// Like [`Tensor::new`] but additionally rejects NaN/Inf entries.
    /// Use this for values arriving from files or generators.
    pub fn from_external(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(Error::contract(format!(
                "tensor data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![v],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    /// Number of rows when viewed as a matrix.
    pub fn rows(&self) -> usize {
        assert_eq!(self.dims.len(), 2, "not a matrix: dims {:?}", self.dims);
        self.dims[0]
    }

    /// Number of columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        assert_eq!(self.dims.len(), 2, "not a matrix: dims {:?}", self.dims);
        self.dims[1]
    }

    /// Row `r` of a matrix as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Entry `(r, c)` of a matrix.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        let cols = self.cols();
        self.data[r * cols + c]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    /// True when every element is bitwise identical to `other`'s.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
