//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Every differentiable operation goes through [`record`] with one of the
//! closed set of [`Primitive`]s. Values are computed eagerly. When an input
//! belongs to an active [`Tape`], the operation is appended to that tape and
//! the output carries a handle back to its node.
//!
//! Backward rules are themselves written in terms of the same primitives, so
//! a backward pass run with `create_graph = true` lands on the tape and can be
//! differentiated again (second-order MAML).
//!
//! All `Sum`/`Mean` reductions and the log-sum-exp inside the softmax
//! cross-entropy add their terms in sorted order. The reduced value therefore
//! depends only on the multiset of terms, not on their order in memory.

mod kernels;
mod tape;

use std::fmt;
use std::sync::Arc;

pub use tape::{grad, no_record, Gradients, NoRecordGuard, Tape};

use crate::error::{Error, Result};

/// Identifies a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handle {
    pub(crate) tape: u64,
    pub(crate) node: usize,
}

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    handle: Option<Handle>,
}

/// The closed primitive set understood by the tape.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Add,
    Mul,
    /// 2-D matrix product of `op(a)` and `op(b)` where `op` optionally transposes.
    Matmul {
        trans_a: bool,
        trans_b: bool,
    },
    Relu,
    Tanh,
    /// Reduce by summation to a shape that broadcasts back to the input.
    Sum {
        to: Vec<usize>,
    },
    /// Like `Sum`, divided by the number of reduced terms per output.
    Mean {
        to: Vec<usize>,
    },
    Square,
    Exp,
    Log,
    /// Mean over rows of `-log softmax(logits)[label]`; logits are `[rows, classes]`.
    SoftmaxCrossEntropy {
        labels: Arc<[usize]>,
    },
    /// Row selection along axis 0.
    Gather {
        indices: Arc<[usize]>,
    },
    /// Concatenate 2-D tensors along axis 0 or 1.
    Concat {
        axis: usize,
    },
    /// Right-aligned broadcast to a larger shape.
    Broadcast {
        to: Vec<usize>,
    },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Matmul { .. } => "matmul",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
            Primitive::Square => "square",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Primitive::Gather { .. } => "gather",
            Primitive::Concat { .. } => "concat",
            Primitive::Broadcast { .. } => "broadcast",
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "shape {:?} holds {} values, buffer has {}",
                    shape,
                    numel(&shape),
                    data.len()
                ),
            ));
        }
        Ok(Self::from_parts(shape, data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
            handle: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    /// Builds a `[rows, cols]` matrix from row slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("tensor", "ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn column(values: &[f64]) -> Self {
        Self::from_parts(vec![values.len(), 1], values.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn handle(&self) -> Option<Handle> {
        self.handle
    }

    pub fn is_tracked(&self) -> bool {
        self.handle.is_some()
    }

    /// Same value, no tape participation.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            handle: None,
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if numel(&shape) != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
            handle: None,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn with_handle(mut self, handle: Handle) -> Self {
        self.handle = Some(handle);
        self
    }

    // Primitive wrappers.

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        record(Primitive::Add, &[self, other])
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        record(Primitive::Mul, &[self, other])
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_t(other, false, false)
    }

    pub fn matmul_t(&self, other: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor> {
        record(Primitive::Matmul { trans_a, trans_b }, &[self, other])
    }

    pub fn relu(&self) -> Result<Tensor> {
        record(Primitive::Relu, &[self])
    }

    pub fn tanh(&self) -> Result<Tensor> {
        record(Primitive::Tanh, &[self])
    }

    pub fn sum_to(&self, to: &[usize]) -> Result<Tensor> {
        record(Primitive::Sum { to: to.to_vec() }, &[self])
    }

    pub fn sum(&self) -> Result<Tensor> {
        self.sum_to(&[])
    }

    pub fn mean_to(&self, to: &[usize]) -> Result<Tensor> {
        record(Primitive::Mean { to: to.to_vec() }, &[self])
    }

    pub fn mean(&self) -> Result<Tensor> {
        self.mean_to(&[])
    }

    pub fn square(&self) -> Result<Tensor> {
        record(Primitive::Square, &[self])
    }

    pub fn exp(&self) -> Result<Tensor> {
        record(Primitive::Exp, &[self])
    }

    pub fn log(&self) -> Result<Tensor> {
        record(Primitive::Log, &[self])
    }

    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        record(
            Primitive::SoftmaxCrossEntropy {
                labels: labels.into(),
            },
            &[self],
        )
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        record(
            Primitive::Gather {
                indices: indices.into(),
            },
            &[self],
        )
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        record(Primitive::Concat { axis }, parts)
    }

    pub fn broadcast_to(&self, to: &[usize]) -> Result<Tensor> {
        if self.shape == to {
            return Ok(self.clone());
        }
        record(Primitive::Broadcast { to: to.to_vec() }, &[self])
    }

    // Composites built from primitives.

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.mul(&Tensor::full(&self.shape, c))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.neg()?)
    }

    /// Adds `other` after broadcasting it to `self`'s shape (bias add).
    pub fn add_broadcast(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.broadcast_to(&self.shape)?)
    }

    /// Mean squared error against a constant or tracked target of equal shape.
    pub fn mse(&self, target: &Tensor) -> Result<Tensor> {
        self.sub(target)?.square()?.mean()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("handle", &self.handle)
            .finish()
    }
}

impl PartialEq for Tensor {
    /// Value equality (shape and bitwise data); tape handles are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Applies `op` to `inputs`, computing the value eagerly and appending a node
/// to the innermost active tape that owns one of the inputs.
pub fn record(op: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    let (shape, data) = kernels::forward(&op, inputs)?;
    let out = Tensor::from_parts(shape, data);
    Ok(tape::push_node(op, inputs, out))
}
