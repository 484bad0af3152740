//! Minimal reverse-mode differentiation engine.
//!
//! Computations are recorded on a [`Tape`] of dense 2-D tensors. Every
//! primitive evaluates eagerly and appends one node; [`Tape::grad`] walks
//! the record backwards and emits the adjoint computation as ordinary
//! tape nodes, so gradients are themselves differentiable
//! (reverse-over-reverse) with no special casing.

mod tape;
mod tensor;

pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
