//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Computations are expressed as static [`Graph`]s of primitive ops over
//! row-major tensors. Free inputs and parameters are bound by name at
//! evaluation time; [`Graph::backward`] propagates adjoints through every
//! primitive, including the cumulative scan `h_t = a_t ⊙ h_{t-1} + b_t`,
//! and [`check_gradients`] compares them against central finite differences.
//!
//! Tensors and graphs are immutable after construction and safe to share
//! across threads; a single evaluation is sequential and bit-deterministic.

mod autodiff;
mod graph;
mod kernels;
#[cfg(test)]
mod tests;

pub use autodiff::{check_gradients, BackwardPass, GradCheckEntry, GradCheckReport};
pub use graph::{Graph, GraphBuilder, NodeId, OpKind};

use std::collections::BTreeMap;
use thiserror::Error;

/// Scalar type used by every numeric kernel. `f64` by default; the `f32`
/// cargo feature switches the whole crate to single precision.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Named tensors bound to a graph's inputs and parameters.
pub type Bindings = BTreeMap<String, Tensor>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("node #{node} ({op}): {msg}")]
    Node { node: NodeId, op: String, msg: String },
    #[error("unbound input `{0}`")]
    UnboundInput(String),
    #[error("unknown output `{0}`")]
    UnknownOutput(String),
    #[error("backward requires a scalar output; `{output}` has shape {shape:?}")]
    NonScalarOutput { output: String, shape: Vec<usize> },
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeDataMismatch { shape, len: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    /// `new` for callers that construct the shape/data pair themselves.
    pub fn from_vec(shape: &[usize], data: Vec<Real>) -> Self {
        Tensor::new(shape.to_vec(), data).expect("shape/data mismatch")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn full(shape: &[usize], value: Real) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: Real) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    /// N×3 tensor from a list of 3-vectors.
    pub fn from_points(points: &[[Real; 3]]) -> Self {
        let mut data = Vec::with_capacity(points.len() * 3);
        for p in points {
            data.extend_from_slice(p);
        }
        Tensor { shape: vec![points.len(), 3], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar (or one-element) tensor.
    pub fn item(&self) -> Real {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, row: usize, col: usize) -> Real {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    /// Rows of a rank-2 tensor with three columns, as 3-vectors.
    pub fn rows3(&self) -> Vec<[Real; 3]> {
        assert_eq!(self.shape.len(), 2, "rows3 on rank-{} tensor", self.shape.len());
        assert_eq!(self.shape[1], 3);
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

}
