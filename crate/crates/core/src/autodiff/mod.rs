//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records a closed set of primitives (matrix product,
//! broadcasting add/multiply, scaling, sigmoid, softmax, leaky rectifier,
//! squared norm, log-sum-exp, row gather, band-axis contraction, sums,
//! concatenation, reshape and row normalization). [`Tape::backward`] replays
//! the record in reverse to produce exact gradients for every parameter leaf,
//! and [`grad_check`] verifies them against central differences.

mod gradcheck;
pub mod kernels;
mod store;
mod tape;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, TensorCheck};
pub use store::{GradStore, ParamStore, Tensor};
pub use tape::{forward_plain, forward_record, sigmoid, ContractSpec, Primitive, Tape, Var};

#[cfg(test)]
mod tests;
