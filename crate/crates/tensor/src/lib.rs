//! Dense `f64` tensors, the handful of operations the interaction model
//! needs, and a reverse-mode gradient tape with a finite-difference checker.

pub mod error;
pub mod gradcheck;
pub mod init;
pub mod kernels;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_coords};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
