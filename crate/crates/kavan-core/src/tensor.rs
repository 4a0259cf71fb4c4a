//! Dense 64-bit tensors with tape-based reverse-mode differentiation.
//!
//! The engine is deliberately small: enough operations to express an
//! attention-pooled hierarchical LSTM with its losses, every adjoint rule
//! verifiable by central finite differences. A [`Tape`] records executed
//! operations in order; [`Tensor`] handles index into it. Calling
//! [`Tensor::backward`] on a scalar replays the adjoint rules in reverse,
//! accumulating gradients into every `requires_grad` leaf that is an
//! ancestor of the scalar.
//!
//! Design constraints:
//! - everything is `f64`; gradient checking at 1e-6 relative tolerance
//!   rules out single precision,
//! - binary operations require equal shapes, with the single exception of
//!   a one-element tensor paired with any tensor (scalar broadcast),
//! - repeated `backward` calls accumulate into leaf gradients; use
//!   [`Tape::zero_grad`] to reset.

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Plain storage
// ---------------------------------------------------------------------------

/// A plain n-dimensional array: row-major `f64` data plus a shape.
///
/// `Array` is the storage/interchange half of the tensor story — heatmaps,
/// datasets, and saved parameters are `Array`s; differentiable computation
/// happens on [`Tensor`]s created from them. Serializes as
/// `{"shape": [...], "data": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArrayRepr")]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Deserialize)]
struct ArrayRepr {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<ArrayRepr> for Array {
    type Error = Error;

    fn try_from(repr: ArrayRepr) -> Result<Array> {
        Array::new(repr.shape, repr.data)
    }
}

impl Array {
    /// Builds an array, checking that `shape` and `data` agree.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Array> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Contract(format!(
                "array shape {shape:?} has a zero dimension"
            )));
        }
        if numel != data.len() {
            return Err(Error::Contract(format!(
                "array shape {:?} implies {} elements but data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Array {
        let numel = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Array {
        let numel = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Array {
        Array {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1-D array from a slice.
    pub fn vector(data: &[f64]) -> Array {
        Array {
            shape: vec![data.len()],
            data: data.to_vec(),
        }
    }

    /// 2-D array from rows × cols row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Array> {
        Array::new(vec![rows, cols], data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Element of a rank-2 array.
    pub fn get2(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn set2(&mut self, row: usize, col: usize, value: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.data[row * self.shape[1] + col] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest element; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

/// Population mean of a slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divides by n, not n−1).
pub fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Tanh,
    Sigmoid,
    Exp,
    Square,
    Relu,
    Ln,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Binary { kind: BinaryKind, a: usize, b: usize },
    Unary { kind: UnaryKind, a: usize },
    Softmax { a: usize },
    Reduce { kind: ReduceKind, a: usize, axis: Option<usize> },
    Reshape { a: usize },
    Transpose { a: usize },
    Concat { parts: Vec<usize> },
    Slice { a: usize, start: usize },
    Gather { a: usize, indices: Vec<Option<usize>> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Persistent gradient buffer; allocated only for `requires_grad` leaves.
    grad: Vec<f64>,
    requires_grad: bool,
    /// True if this node is, or depends on, a `requires_grad` leaf.
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Ordered record of executed operations.
///
/// Cheap to clone (shared handle). A tape is single-threaded; for parallel
/// work, build an independent tape per thread from plain [`Array`] data.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        let needs_grad = requires_grad || {
            let inner = self.inner.borrow();
            op_inputs(&op).iter().any(|&i| inner.nodes[i].needs_grad)
        };
        let grad = if requires_grad {
            vec![0.0; data.len()]
        } else {
            Vec::new()
        };
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            data,
            grad,
            requires_grad,
            needs_grad,
            op,
        });
        Tensor {
            tape: self.clone(),
            idx,
        }
    }

    /// Records a leaf holding `value`.
    pub fn leaf(&self, value: Array, requires_grad: bool) -> Tensor {
        self.push(value.shape, value.data, requires_grad, Op::Leaf)
    }

    /// A leaf that does not participate in differentiation.
    pub fn constant(&self, value: Array) -> Tensor {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Tensor {
        self.constant(Array::scalar(value))
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor {
        self.constant(Array::zeros(shape))
    }

    pub fn ones(&self, shape: &[usize]) -> Tensor {
        self.constant(Array::filled(shape, 1.0))
    }

    /// Clears the accumulated gradients of every `requires_grad` leaf.
    pub fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        for node in &mut inner.nodes {
            for g in &mut node.grad {
                *g = 0.0;
            }
        }
    }
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::Matmul { a, b } | Op::Binary { a, b, .. } => vec![*a, *b],
        Op::Unary { a, .. }
        | Op::Softmax { a }
        | Op::Reduce { a, .. }
        | Op::Reshape { a }
        | Op::Transpose { a }
        | Op::Slice { a, .. }
        | Op::Gather { a, .. } => vec![*a],
        Op::Concat { parts } => parts.clone(),
    }
}

// ---------------------------------------------------------------------------
// Tensor handle and operations
// ---------------------------------------------------------------------------

/// Handle to a node on a [`Tape`].
///
/// Tensors are immutable once created; all operations produce new nodes.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    idx: usize,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        f.debug_struct("Tensor")
            .field("idx", &self.idx)
            .field("shape", &node.shape)
            .field("requires_grad", &node.requires_grad)
            .finish()
    }
}

impl Tensor {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.idx].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.idx].data.len()
    }

    /// Snapshot of the forward value.
    pub fn data(&self) -> Vec<f64> {
        self.tape.inner.borrow().nodes[self.idx].data.clone()
    }

    /// Value of a one-element tensor.
    pub fn scalar_value(&self) -> f64 {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        debug_assert_eq!(node.data.len(), 1, "scalar_value on non-scalar tensor");
        node.data[0]
    }

    pub fn to_array(&self) -> Array {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        Array {
            shape: node.shape.clone(),
            data: node.data.clone(),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.idx].requires_grad
    }

    /// Accumulated gradient; `Some` only for `requires_grad` leaves.
    pub fn grad(&self) -> Option<Vec<f64>> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        if node.requires_grad {
            Some(node.grad.clone())
        } else {
            None
        }
    }

    fn same_tape(&self, other: &Tensor) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "tensors must live on the same tape"
        );
    }

    // -- shape ops ----------------------------------------------------------

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let (data, old_shape) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.idx];
            (node.data.clone(), node.shape.clone())
        };
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: old_shape,
                rhs: shape.to_vec(),
            });
        }
        Ok(self
            .tape
            .push(shape.to_vec(), data, false, Op::Reshape { a: self.idx }))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        if node.shape.len() != 2 {
            return Err(Error::Contract(format!(
                "transpose requires a rank-2 tensor, got shape {:?}",
                node.shape
            )));
        }
        let (m, n) = (node.shape[0], node.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = node.data[i * n + j];
            }
        }
        drop(inner);
        Ok(self
            .tape
            .push(vec![n, m], out, false, Op::Transpose { a: self.idx }))
    }

    /// Contiguous sub-vector of a rank-1 tensor.
    pub fn slice(&self, start: usize, len: usize) -> Result<Tensor> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        if node.shape.len() != 1 {
            return Err(Error::Contract(format!(
                "slice requires a rank-1 tensor, got shape {:?}",
                node.shape
            )));
        }
        if start + len > node.data.len() {
            return Err(Error::Contract(format!(
                "slice [{start}, {}) out of range for length {}",
                start + len,
                node.data.len()
            )));
        }
        let out = node.data[start..start + len].to_vec();
        drop(inner);
        Ok(self.tape.push(
            vec![len],
            out,
            false,
            Op::Slice {
                a: self.idx,
                start,
            },
        ))
    }

    /// Picks elements by flat index; `None` slots produce zero padding.
    pub fn gather(&self, indices: &[Option<usize>]) -> Result<Tensor> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        let numel = node.data.len();
        let mut out = Vec::with_capacity(indices.len());
        for slot in indices {
            match slot {
                Some(i) if *i < numel => out.push(node.data[*i]),
                Some(i) => {
                    return Err(Error::Contract(format!(
                        "gather index {i} out of range for {numel} elements"
                    )))
                }
                None => out.push(0.0),
            }
        }
        drop(inner);
        Ok(self.tape.push(
            vec![indices.len()],
            out,
            false,
            Op::Gather {
                a: self.idx,
                indices: indices.to_vec(),
            },
        ))
    }

    // -- arithmetic ----------------------------------------------------------

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_tape(rhs);
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.idx];
        let b = &inner.nodes[rhs.idx];
        if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let out = matmul_raw(&a.data, &b.data, m, k, n);
        drop(inner);
        Ok(self.tape.push(
            vec![m, n],
            out,
            false,
            Op::Matmul {
                a: self.idx,
                b: rhs.idx,
            },
        ))
    }

    fn binary(&self, rhs: &Tensor, kind: BinaryKind, name: &'static str) -> Result<Tensor> {
        self.same_tape(rhs);
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.idx];
        let b = &inner.nodes[rhs.idx];
        let a_scalar = a.data.len() == 1;
        let b_scalar = b.data.len() == 1;
        if a.shape != b.shape && !a_scalar && !b_scalar {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let out_len = a.data.len().max(b.data.len());
        let shape = if a.data.len() >= b.data.len() {
            a.shape.clone()
        } else {
            b.shape.clone()
        };
        let mut out = Vec::with_capacity(out_len);
        for i in 0..out_len {
            let x = a.data[if a_scalar { 0 } else { i }];
            let y = b.data[if b_scalar { 0 } else { i }];
            out.push(match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
            });
        }
        drop(inner);
        Ok(self.tape.push(
            shape,
            out,
            false,
            Op::Binary {
                kind,
                a: self.idx,
                b: rhs.idx,
            },
        ))
    }

    /// Elementwise sum. Shapes must match, or one side must be one-element.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinaryKind::Add, "add")
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinaryKind::Sub, "sub")
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.binary(rhs, BinaryKind::Mul, "mul")
    }

    pub fn add_scalar(&self, value: f64) -> Tensor {
        let c = self.tape.scalar(value);
        self.add(&c).expect("scalar add cannot mismatch")
    }

    pub fn mul_scalar(&self, value: f64) -> Tensor {
        let c = self.tape.scalar(value);
        self.mul(&c).expect("scalar mul cannot mismatch")
    }

    fn unary(&self, kind: UnaryKind) -> Tensor {
        let out: Vec<f64> = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.idx];
            node.data
                .iter()
                .map(|&x| match kind {
                    UnaryKind::Tanh => x.tanh(),
                    UnaryKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
                    UnaryKind::Exp => x.exp(),
                    UnaryKind::Square => x * x,
                    UnaryKind::Relu => {
                        if x > 0.0 {
                            x
                        } else {
                            0.0
                        }
                    }
                    UnaryKind::Ln => x.ln(),
                })
                .collect()
        };
        let shape = self.shape();
        self.tape.push(shape, out, false, Op::Unary { kind, a: self.idx })
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(UnaryKind::Tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(UnaryKind::Exp)
    }

    pub fn square(&self) -> Tensor {
        self.unary(UnaryKind::Square)
    }

    /// max(0, x); subgradient 0 at the kink.
    pub fn relu(&self) -> Tensor {
        self.unary(UnaryKind::Relu)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(UnaryKind::Ln)
    }

    /// Numerically stabilized softmax over all elements.
    pub fn softmax(&self) -> Result<Tensor> {
        let out: Vec<f64> = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.idx];
            if node.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "softmax" });
            }
            softmax_raw(&node.data)
        };
        let shape = self.shape();
        Ok(self
            .tape
            .push(shape, out, false, Op::Softmax { a: self.idx }))
    }

    fn reduce(&self, kind: ReduceKind, axis: Option<usize>, name: &'static str) -> Result<Tensor> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        let (shape, out) = match axis {
            None => {
                let s: f64 = node.data.iter().sum();
                let v = match kind {
                    ReduceKind::Sum => s,
                    ReduceKind::Mean => s / node.data.len() as f64,
                };
                (vec![1], vec![v])
            }
            Some(ax) => {
                if ax >= node.shape.len() {
                    return Err(Error::InvalidAxis {
                        op: name,
                        axis: ax,
                        shape: node.shape.clone(),
                    });
                }
                let (outer, len, inner_sz) = axis_extents(&node.shape, ax);
                let mut out = vec![0.0; outer * inner_sz];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner_sz {
                            out[o * inner_sz + i] +=
                                node.data[(o * len + l) * inner_sz + i];
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    for v in &mut out {
                        *v /= len as f64;
                    }
                }
                let mut shape: Vec<usize> = node.shape.clone();
                shape.remove(ax);
                if shape.is_empty() {
                    shape.push(1);
                }
                (shape, out)
            }
        };
        drop(inner);
        Ok(self.tape.push(
            shape,
            out,
            false,
            Op::Reduce {
                kind,
                a: self.idx,
                axis,
            },
        ))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor {
        self.reduce(ReduceKind::Sum, None, "sum")
            .expect("full reduction cannot fail")
    }

    pub fn mean_all(&self) -> Tensor {
        self.reduce(ReduceKind::Mean, None, "mean")
            .expect("full reduction cannot fail")
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce(ReduceKind::Sum, Some(axis), "sum")
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce(ReduceKind::Mean, Some(axis), "mean")
    }

    /// Indices of per-slice maxima along `axis` (all elements when `None`).
    ///
    /// Not differentiable: the result is a fresh constant leaf, excluded
    /// from the recorded computation path.
    pub fn max_index(&self, axis: Option<usize>) -> Result<Tensor> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        let (shape, out) = match axis {
            None => {
                let arr = Array {
                    shape: node.shape.clone(),
                    data: node.data.clone(),
                };
                (vec![1], vec![arr.argmax() as f64])
            }
            Some(ax) => {
                if ax >= node.shape.len() {
                    return Err(Error::InvalidAxis {
                        op: "max_index",
                        axis: ax,
                        shape: node.shape.clone(),
                    });
                }
                let (outer, len, inner_sz) = axis_extents(&node.shape, ax);
                let mut out = vec![0.0; outer * inner_sz];
                for o in 0..outer {
                    for i in 0..inner_sz {
                        let mut best = 0usize;
                        for l in 1..len {
                            let v = node.data[(o * len + l) * inner_sz + i];
                            if v > node.data[(o * len + best) * inner_sz + i] {
                                best = l;
                            }
                        }
                        out[o * inner_sz + i] = best as f64;
                    }
                }
                let mut shape: Vec<usize> = node.shape.clone();
                shape.remove(ax);
                if shape.is_empty() {
                    shape.push(1);
                }
                (shape, out)
            }
        };
        drop(inner);
        Ok(self.tape.push(shape, out, false, Op::Leaf))
    }

    // -- backward -------------------------------------------------------------

    /// Reverse pass from a scalar.
    ///
    /// Gradients of `requires_grad` leaves accumulate across calls; a leaf
    /// that does not feed into the scalar keeps its zero gradient.
    pub fn backward(&self) -> Result<()> {
        let mut inner = self.tape.inner.borrow_mut();
        if inner.nodes[self.idx].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                inner.nodes[self.idx].shape
            )));
        }
        backward_from(&mut inner, self.idx);
        Ok(())
    }
}

/// Concatenates rank-1 tensors in order.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
    let tape = first.tape.clone();
    let mut data = Vec::new();
    let mut ids = Vec::with_capacity(parts.len());
    {
        let inner = tape.inner.borrow();
        for part in parts {
            first.same_tape(part);
            let node = &inner.nodes[part.idx];
            if node.shape.len() != 1 {
                return Err(Error::Contract(format!(
                    "concat requires rank-1 tensors, got shape {:?}",
                    node.shape
                )));
            }
            data.extend_from_slice(&node.data);
            ids.push(part.idx);
        }
    }
    let len = data.len();
    Ok(tape.push(vec![len], data, false, Op::Concat { parts: ids }))
}

// ---------------------------------------------------------------------------
// Raw kernels
// ---------------------------------------------------------------------------

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let row = &b[p * n..(p + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                dst[j] += av * row[j];
            }
        }
    }
    out
}

fn softmax_raw(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// (product before axis, axis length, product after axis)
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

fn backward_from(inner: &mut TapeInner, loss: usize) {
    if !inner.nodes[loss].needs_grad {
        return;
    }
    // Scratch adjoints for this call only; accumulated into persistent leaf
    // gradients at the end so that repeated backward calls add up exactly.
    let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss + 1];
    adj[loss] = Some(vec![1.0]);

    for id in (0..=loss).rev() {
        let Some(out_grad) = adj[id].take() else {
            continue;
        };
        // Re-attach for leaves below; taken here to allow mutable splits.
        let node = &inner.nodes[id];
        if node.requires_grad {
            let node = &mut inner.nodes[id];
            for (g, d) in node.grad.iter_mut().zip(&out_grad) {
                *g += d;
            }
        }
        match &inner.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let m = inner.nodes[a].shape[0];
                let k = inner.nodes[a].shape[1];
                let n = inner.nodes[b].shape[1];
                if inner.nodes[a].needs_grad {
                    let bd = &inner.nodes[b].data;
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += out_grad[i * n + j] * bd[p * n + j];
                            }
                            ga[i * k + p] = s;
                        }
                    }
                    accumulate(&mut adj, a, &ga);
                }
                if inner.nodes[b].needs_grad {
                    let ad = &inner.nodes[a].data;
                    let mut gb = vec![0.0; k * n];
                    for p in 0..k {
                        for i in 0..m {
                            let av = ad[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += av * out_grad[i * n + j];
                            }
                        }
                    }
                    accumulate(&mut adj, b, &gb);
                }
            }
            Op::Binary { kind, a, b } => {
                let (kind, a, b) = (*kind, *a, *b);
                let a_len = inner.nodes[a].data.len();
                let b_len = inner.nodes[b].data.len();
                let out_len = out_grad.len();
                if inner.nodes[a].needs_grad {
                    let mut ga = vec![0.0; a_len];
                    for i in 0..out_len {
                        let ai = if a_len == 1 { 0 } else { i };
                        let g = match kind {
                            BinaryKind::Add | BinaryKind::Sub => out_grad[i],
                            BinaryKind::Mul => {
                                let bv =
                                    inner.nodes[b].data[if b_len == 1 { 0 } else { i }];
                                out_grad[i] * bv
                            }
                        };
                        ga[ai] += g;
                    }
                    accumulate(&mut adj, a, &ga);
                }
                if inner.nodes[b].needs_grad {
                    let mut gb = vec![0.0; b_len];
                    for i in 0..out_len {
                        let bi = if b_len == 1 { 0 } else { i };
                        let g = match kind {
                            BinaryKind::Add => out_grad[i],
                            BinaryKind::Sub => -out_grad[i],
                            BinaryKind::Mul => {
                                let av =
                                    inner.nodes[a].data[if a_len == 1 { 0 } else { i }];
                                out_grad[i] * av
                            }
                        };
                        gb[bi] += g;
                    }
                    accumulate(&mut adj, b, &gb);
                }
            }
            Op::Unary { kind, a } => {
                let (kind, a) = (*kind, *a);
                if inner.nodes[a].needs_grad {
                    let y = &inner.nodes[id].data;
                    let x = &inner.nodes[a].data;
                    let ga: Vec<f64> = (0..x.len())
                        .map(|i| {
                            let d = match kind {
                                UnaryKind::Tanh => 1.0 - y[i] * y[i],
                                UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                                UnaryKind::Exp => y[i],
                                UnaryKind::Square => 2.0 * x[i],
                                UnaryKind::Relu => {
                                    if x[i] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryKind::Ln => 1.0 / x[i],
                            };
                            out_grad[i] * d
                        })
                        .collect();
                    accumulate(&mut adj, a, &ga);
                }
            }
            Op::Softmax { a } => {
                let a = *a;
                if inner.nodes[a].needs_grad {
                    let y = &inner.nodes[id].data;
                    let dot: f64 = out_grad.iter().zip(y).map(|(g, s)| g * s).sum();
                    let ga: Vec<f64> = y
                        .iter()
                        .zip(&out_grad)
                        .map(|(&s, &g)| s * (g - dot))
                        .collect();
                    accumulate(&mut adj, a, &ga);
                }
            }
            Op::Reduce { kind, a, axis } => {
                let (kind, a, axis) = (*kind, *a, *axis);
                if inner.nodes[a].needs_grad {
                    let in_shape = inner.nodes[a].shape.clone();
                    let in_len = inner.nodes[a].data.len();
                    let mut ga = vec![0.0; in_len];
                    match axis {
                        None => {
                            let scale = match kind {
                                ReduceKind::Sum => 1.0,
                                ReduceKind::Mean => 1.0 / in_len as f64,
                            };
                            let g = out_grad[0] * scale;
                            ga.fill(g);
                        }
                        Some(ax) => {
                            let (outer, len, inner_sz) = axis_extents(&in_shape, ax);
                            let scale = match kind {
                                ReduceKind::Sum => 1.0,
                                ReduceKind::Mean => 1.0 / len as f64,
                            };
                            for o in 0..outer {
                                for l in 0..len {
                                    for i in 0..inner_sz {
                                        ga[(o * len + l) * inner_sz + i] =
                                            out_grad[o * inner_sz + i] * scale;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut adj, a, &ga);
                }
            }
            Op::Reshape { a } => {
                let a = *a;
                if inner.nodes[a].needs_grad {
                    accumulate(&mut adj, a, &out_grad);
                }
            }
            Op::Transpose { a } => {
                let a = *a;
                if inner.nodes[a].needs_grad {
                    let (m, n) = (inner.nodes[a].shape[0], inner.nodes[a].shape[1]);
                    let mut ga = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] = out_grad[j * m + i];
                        }
                    }
                    accumulate(&mut adj, a, &ga);
                }
            }
            Op::Concat { parts } => {
                let parts = parts.clone();
                let mut offset = 0;
                for part in parts {
                    let len = inner.nodes[part].data.len();
                    if inner.nodes[part].needs_grad {
                        accumulate(&mut adj, part, &out_grad[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Slice { a, start } => {
                let (a, start) = (*a, *start);
                if inner.nodes[a].needs_grad {
                    let mut ga = vec![0.0; inner.nodes[a].data.len()];
                    ga[start..start + out_grad.len()].copy_from_slice(&out_grad);
                    accumulate(&mut adj, a, &ga);
                }
            }
            Op::Gather { a, indices } => {
                let a = *a;
                if inner.nodes[a].needs_grad {
                    let mut ga = vec![0.0; inner.nodes[a].data.len()];
                    for (j, slot) in indices.iter().enumerate() {
                        if let Some(i) = slot {
                            ga[*i] += out_grad[j];
                        }
                    }
                    accumulate(&mut adj, a, &ga);
                }
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], idx: usize, grad: &[f64]) {
    match &mut adj[idx] {
        Some(buf) => {
            for (b, g) in buf.iter_mut().zip(grad) {
                *b += g;
            }
        }
        slot @ None => *slot = Some(grad.to_vec()),
    }
}
