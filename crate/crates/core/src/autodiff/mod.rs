//! Reverse-mode differentiation over dense row-major tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! and enough information to push gradients back to its inputs. Nodes are
//! created in topological order, so [`Graph::backward`] is a single reverse
//! sweep. Parameters enter the tape by reference and are never copied.

mod graph;
pub mod kernels;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward already ran on this graph; call zero_grad first")]
    StaleGraph,
}

#[cfg(test)]
mod tests;
