//! Deterministic numeric substrate: tensors, complex 2D DFT, stable
//! softmax, seeded RNG and the finite-difference gradient oracle.

pub mod dft;
pub mod gradcheck;
pub mod linalg;
pub mod rng;
pub mod softmax;
pub mod tensor;

pub use dft::{dft2, idft2, idft2_full, naive_dft2, ComplexGrid};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use rng::Rng;
pub use softmax::{softmax_row_inplace, softmax_rows};
pub use tensor::Tensor;
