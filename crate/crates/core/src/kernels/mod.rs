//! Forward and backward kernels over plain tensors.
//!
//! Everything here is free of graph bookkeeping; [`crate::autodiff::Graph`]
//! records which kernel produced a value and calls the matching backward rule.

pub mod activation;
pub mod broadcast;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::Activation;
pub use broadcast::BinaryOp;
pub use norm::BatchNormStats;
