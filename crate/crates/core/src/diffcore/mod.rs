//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Single-threaded per tape; all arithmetic in f64 so training and exact
//! oracles share one precision. Gradients accumulate additively and are
//! cleared by optimizer steps.

mod checkpoint;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::{load_params, restore_params, save_params};
pub use graph::{Graph, NodeId};
pub use optim::{accumulate_grads, sgd_step, Adam, Param};
pub use tensor::Tensor;

pub(crate) use graph::sigmoid;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape {shape:?} does not match buffer of length {len}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("log of non-positive value {0}; clamp inputs to >= 1e-8 first")]
    LogNonPositive(f64),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("bad magic: expected {expected}, found {found:?}")]
    BadMagic {
        expected: &'static str,
        found: Vec<u8>,
    },
    #[error("unsupported version: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated payload")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(&'static str),
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DiffError {
    fn from(e: std::io::Error) -> Self {
        DiffError::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests;
