//! Dense-matrix reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a 2-D row-major `f64` array with an embedded gradient
//! buffer. [`Tape`] records every differentiable operation during a
//! forward pass; [`Tape::backward`] replays the records in reverse and
//! accumulates `d loss / d leaf` into every tensor that requires a
//! gradient. Gradients always accumulate (`+=`), never overwrite, so a
//! tensor used several times — a weight shared across layers, a note
//! embedding read by two heads — sums all of its contributions.
//!
//! The operation set is exactly what the model needs: matrix product,
//! causal dilated convolution, pointwise activations, column
//! concatenation/slicing, dropout, embedding lookups, reductions, and a
//! numerically stable binary cross-entropy on logits.

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, worst_rel_err, GradCheckConfig, GradCheckReport};

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};

/// A dense rows x cols matrix of `f64` with a gradient buffer of the
/// same shape. Cheap to clone: clones share the underlying storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorData>>,
}

struct TensorData {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    /// Creates a tensor from row-major values.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "tensor {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        let grad = vec![0.0; values.len()];
        Ok(Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                rows,
                cols,
                values,
                grad,
                requires_grad,
            })),
        })
    }

    /// A trainable tensor (gradient accumulated by backward passes).
    pub fn param(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(rows, cols, values, true)
    }

    /// A non-trainable tensor.
    pub fn constant(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(rows, cols, values, false)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols], false).expect("consistent shape")
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor::new(rows, cols, vec![value; rows * cols], false).expect("consistent shape")
    }

    /// A 1x1 constant.
    pub fn scalar(value: f64) -> Self {
        Tensor::filled(1, 1, value)
    }

    /// Builds a tensor from explicit rows; handy in tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Tensor::constant(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.inner.borrow().rows
    }

    pub fn cols(&self) -> usize {
        self.inner.borrow().cols
    }

    pub fn shape(&self) -> (usize, usize) {
        let d = self.inner.borrow();
        (d.rows, d.cols)
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Borrow of the row-major values.
    pub fn values(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |d| d.values.as_slice())
    }

    /// Borrow of the row-major gradient.
    pub fn grad(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |d| d.grad.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    pub fn grad_to_vec(&self) -> Vec<f64> {
        self.inner.borrow().grad.clone()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let d = self.inner.borrow();
        d.values[row * d.cols + col]
    }

    /// Reads one element by flat row-major index.
    pub fn get_flat(&self, idx: usize) -> f64 {
        self.inner.borrow().values[idx]
    }

    /// Overwrites one element by flat row-major index.
    pub fn set_flat(&self, idx: usize, value: f64) {
        self.inner.borrow_mut().values[idx] = value;
    }

    /// Replaces the whole value buffer (shape preserved).
    pub fn set_values(&self, values: &[f64]) -> Result<()> {
        let mut d = self.inner.borrow_mut();
        if values.len() != d.values.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                d.values.len(),
                values.len()
            )));
        }
        d.values.copy_from_slice(values);
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad.fill(0.0);
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut d = self.inner.borrow_mut();
        debug_assert_eq!(d.grad.len(), delta.len());
        for (g, x) in d.grad.iter_mut().zip(delta) {
            *g += x;
        }
    }

    /// Mutable access to values and gradient together (optimizer hot path).
    pub(crate) fn with_values_and_grad_mut<R>(
        &self,
        f: impl FnOnce(&mut [f64], &mut [f64]) -> R,
    ) -> R {
        let mut d = self.inner.borrow_mut();
        let TensorData {
            ref mut values,
            ref mut grad,
            ..
        } = *d;
        f(values, grad)
    }

    /// True if both handles refer to the same storage.
    pub fn ptr_eq(a: &Tensor, b: &Tensor) -> bool {
        Rc::ptr_eq(&a.inner, &b.inner)
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("rows", &d.rows)
            .field("cols", &d.cols)
            .field("requires_grad", &d.requires_grad)
            .field("values", &d.values)
            .finish()
    }
}

/// One recorded operation: the backward rule, its operands, and its output.
pub(crate) struct Record {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) output: Tensor,
}

pub(crate) enum Op {
    MatMul,
    Transpose,
    /// Causal dilated convolution; kernel rows are grouped by tap, each
    /// group holding one row per input channel.
    ConvDilated {
        kernel_size: usize,
        dilation: usize,
    },
    Sigmoid,
    Tanh,
    Mul,
    Add,
    /// Adds a 1 x c bias row to every row of an n x c operand.
    AddRowBias,
    Scale {
        factor: f64,
    },
    ConcatCols,
    SliceCols {
        offset: usize,
        width: usize,
    },
    /// Mask entries are 0 or 1/(1-p); forward and backward share the mask.
    Dropout {
        mask: Vec<f64>,
    },
    EmbedRows {
        ids: Vec<usize>,
    },
    /// Row j of the output is the mean of the table rows listed in
    /// `id_lists[j]`, or the `fallback` row when the list is empty.
    EmbedMeanRows {
        id_lists: Rc<Vec<Vec<usize>>>,
        fallback: usize,
    },
    BroadcastRows,
    RowSums,
    SumAll,
    ColMax {
        argmax: Vec<usize>,
    },
    BceWithLogits {
        targets: Vec<f64>,
    },
}

/// Ordered record of differentiable operations.
///
/// Operands of every record were produced earlier on the same tape or are
/// leaves, so replaying the records in reverse propagates gradients to
/// every leaf in one pass.
#[derive(Default)]
pub struct Tape {
    records: Vec<Record>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        op: Op,
        inputs: Vec<Tensor>,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    ) -> Tensor {
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let output =
            Tensor::new(rows, cols, values, requires_grad).expect("op produced consistent shape");
        self.records.push(Record {
            op,
            inputs,
            output: output.clone(),
        });
        output
    }

    /// Propagates gradients from `loss` back to every leaf.
    ///
    /// `loss` must be the 1x1 output of the tape's final record; the tape
    /// can be consumed only once.
    pub fn backward(&mut self, loss: &Tensor) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let last = self.records.last().ok_or(Error::LossNotFinal)?;
        if !Tensor::ptr_eq(&last.output, loss) {
            return Err(Error::LossNotFinal);
        }
        let (rows, cols) = loss.shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::LossNotScalar { rows, cols });
        }
        self.consumed = true;
        loss.accumulate_grad(&[1.0]);
        for record in self.records.iter().rev() {
            ops::backward_record(record);
        }
        Ok(())
    }
}
