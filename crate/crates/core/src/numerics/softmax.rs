//! Numerically stable row softmax.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Softmax of one contiguous row, in place, with max subtraction.
#[inline]
pub fn softmax_row_inplace(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Row-wise softmax of a rank-2 tensor.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    m.expect_rank(2, "softmax_rows input")?;
    if m.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_input("softmax_rows requires finite entries"));
    }
    let width = m.shape()[1];
    let mut out = m.clone();
    for row in out.data_mut().chunks_exact_mut(width) {
        softmax_row_inplace(row);
    }
    Ok(out)
}
