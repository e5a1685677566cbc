//! Dense real-valued N-dimensional array, row-major, double precision.
//!
//! The universal numeric carrier for images, disparity maps and token
//! matrices. Inputs are validated for finiteness at construction;
//! intermediate buffers produced inside hot loops use the unchecked
//! constructors and are re-validated at operation boundaries.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` matches the shape product and
    /// contains only finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid_input(format!(
                "tensor data length {} does not match shape {:?} (product {})",
                data.len(),
                shape,
                n
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid_input(format!(
                "tensor contains non-finite entry {bad}"
            )));
        }
        Ok(Self { shape, data })
    }

    /// Construct without the finiteness scan. Length is still enforced.
    pub fn from_vec_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Flat index for a rank-2 tensor.
    #[inline]
    pub fn idx2(&self, r: usize, c: usize) -> usize {
        debug_assert_eq!(self.rank(), 2);
        r * self.shape[1] + c
    }

    /// Flat index for a rank-3 tensor.
    #[inline]
    pub fn idx3(&self, a: usize, b: usize, c: usize) -> usize {
        debug_assert_eq!(self.rank(), 3);
        (a * self.shape[1] + b) * self.shape[2] + c
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[self.idx2(r, c)]
    }

    #[inline]
    pub fn at3(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[self.idx3(a, b, c)]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// Errors unless the tensor has exactly the given rank.
    pub fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::invalid_input(format!(
                "{what}: expected rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Maximum absolute difference between two same-shaped tensors.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert!(self.same_shape(other), "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
