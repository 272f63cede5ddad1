//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it executes; [`Tensor`] handles are
//! cheap references into the tape. Calling [`Tensor::backward`] on a scalar
//! sweeps the record in reverse creation order (which is a valid reverse
//! topological order, since execution is eager) and accumulates one gradient
//! contribution per tensor use.
//!
//! Tensors are immutable after creation; only gradient buffers mutate. A tape
//! is single-threaded — parallelism lives inside individual primitives, over
//! independent output elements — so batch-level parallelism is achieved by
//! giving each batch element its own tape.

mod conv;
mod elementwise;
mod matmul;
mod norm;
mod structure;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Element type of a tensor: `f32` for training speed, `f64` for tight-
/// tolerance oracle tests. The whole model stack is generic over this.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    const DTYPE: Dtype;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// On-disk element type tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Dtype> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            c => Err(Error::Parse(format!("unknown dtype code {c}"))),
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub(crate) type NodeId = usize;

/// Gradient rule of one recorded operation. Receives the output gradient and
/// routes contributions to the operation's inputs through the sink.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<'_, T>)>;

pub(crate) struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    /// Parameter-store slot this leaf is bound to, if any.
    param: Option<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Accumulates gradient contributions into per-node buffers during one
/// backward sweep. Each `add` call performs exactly one accumulation.
pub(crate) struct GradSink<'a, T: Scalar> {
    grads: &'a mut [Option<Vec<T>>],
    sizes: &'a [usize],
}

impl<T: Scalar> GradSink<'_, T> {
    /// Add a contribution to node `id`'s gradient. `write` receives the
    /// (zero-initialized on first use) buffer and must `+=` into it.
    pub(crate) fn add<F: FnOnce(&mut [T])>(&mut self, id: NodeId, write: F) {
        let buf = self.grads[id].get_or_insert_with(|| vec![T::zero(); self.sizes[id]]);
        write(buf);
    }
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

/// The computation record: an arena of executed operations.
pub struct Tape<T: Scalar> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                grad_enabled: true,
            })),
        }
    }

    /// A tape that records values but no gradient rules. Used at decode time.
    pub fn inference() -> Self {
        let t = Self::new();
        t.inner.borrow_mut().grad_enabled = false;
        t
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub(crate) fn grad_enabled(&self) -> bool {
        self.inner.borrow().grad_enabled
    }

    fn same_tape(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn push(
        &self,
        data: Arc<Vec<T>>,
        shape: Vec<usize>,
        requires_grad: bool,
        param: Option<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Tensor<T> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let grad_enabled = self.grad_enabled();
        let requires_grad = requires_grad && grad_enabled;
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape: shape.clone(),
            data: Arc::clone(&data),
            requires_grad,
            grad: None,
            param,
            backward: if requires_grad { backward } else { None },
        });
        Tensor {
            tape: self.clone(),
            id,
            shape,
            data,
        }
    }

    /// New leaf tensor.
    pub fn tensor(&self, data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements but {} were given",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(self.push(Arc::new(data), shape.to_vec(), requires_grad, None, None))
    }

    /// New constant (non-differentiable) leaf.
    pub fn constant(&self, data: Vec<T>, shape: &[usize]) -> Result<Tensor<T>> {
        self.tensor(data, shape, false)
    }

    /// Scalar constant with shape `[]`.
    pub fn scalar(&self, v: T) -> Tensor<T> {
        self.push(Arc::new(vec![v]), vec![], false, None, None)
    }

    /// Leaf bound to a parameter-store slot; gradients are retrievable per
    /// parameter after `backward`.
    pub(crate) fn param_leaf(
        &self,
        data: Arc<Vec<T>>,
        shape: Vec<usize>,
        param: usize,
    ) -> Tensor<T> {
        self.push(data, shape, true, Some(param), None)
    }

    /// Clear all stored gradients so the next `backward` starts fresh.
    pub fn reset_grads(&self) {
        for node in self.inner.borrow_mut().nodes.iter_mut() {
            node.grad = None;
        }
    }

    /// Collect gradients of parameter-bound leaves, summed per slot.
    /// `slots` is the parameter-store size.
    pub(crate) fn param_grads(&self, slots: usize) -> Vec<Option<Vec<T>>> {
        let inner = self.inner.borrow();
        let mut out: Vec<Option<Vec<T>>> = (0..slots).map(|_| None).collect();
        for node in &inner.nodes {
            if let (Some(slot), Some(g)) = (node.param, node.grad.as_ref()) {
                match &mut out[slot] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(g) {
                            *a += *b;
                        }
                    }
                    None => out[slot] = Some(g.clone()),
                }
            }
        }
        out
    }
}

/// Handle to one recorded value.
pub struct Tensor<T: Scalar> {
    tape: Tape<T>,
    id: NodeId,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            tape: self.tape.clone(),
            id: self.id,
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor(id={}, shape={:?})", self.id, self.shape)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.to_vec()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub(crate) fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub(crate) fn id(&self) -> NodeId {
        self.id
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Stored gradient, if `backward` has reached this tensor.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    pub(crate) fn expect_same_tape(&self, other: &Tensor<T>) -> Result<()> {
        if self.tape.same_tape(&other.tape) {
            Ok(())
        } else {
            Err(Error::Contract(
                "operands were recorded on different tapes".into(),
            ))
        }
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// reachable `requires_grad` tensor; repeated calls without
    /// [`Tape::reset_grads`] keep accumulating.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "backward on a tensor that does not require gradients".into(),
            ));
        }
        let mut inner = self.tape.inner.borrow_mut();
        let inner = &mut *inner;
        let sizes: Vec<usize> = inner.nodes.iter().map(|n| n.data.len()).collect();
        let mut grads: Vec<Option<Vec<T>>> = (0..inner.nodes.len()).map(|_| None).collect();
        grads[self.id] = Some(vec![T::one()]);

        for id in (0..=self.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !inner.nodes[id].requires_grad {
                continue;
            }
            if let Some(back) = inner.nodes[id].backward.as_ref() {
                let mut sink = GradSink {
                    grads: &mut grads,
                    sizes: &sizes,
                };
                back(&g, &mut sink);
            }
            let node = &mut inner.nodes[id];
            match &mut node.grad {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += *b;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

/// Product of the dimensions, i.e. element count, of a shape.
pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_shape_mismatch_is_rejected() {
        let tape: Tape<f32> = Tape::new();
        let err = tape.tensor(vec![1.0, 2.0], &[3], true).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn backward_requires_scalar() {
        let tape: Tape<f32> = Tape::new();
        let x = tape.tensor(vec![1.0, 2.0], &[2], true).unwrap();
        let err = x.backward().unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![1.0, 2.0, 3.0], &[3], true).unwrap();
        let loss = x.sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_square_is_2x() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![1.0, -2.0, 3.0], &[3], true).unwrap();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn double_use_sums_both_paths() {
        // y = x + x -> grad 2
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![5.0], &[1], true).unwrap();
        let loss = x.add(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![1.0, 1.0], &[2], true).unwrap();
        let loss = x.sum_all();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        tape.reset_grads();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn constants_get_no_grad() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.tensor(vec![2.0], &[1], true).unwrap();
        let c = tape.constant(vec![3.0], &[1]).unwrap();
        let loss = x.mul(&c).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0]);
        assert!(c.grad().is_none());
    }

    #[test]
    fn inference_tape_records_no_rules() {
        let tape: Tape<f64> = Tape::inference();
        let x = tape.tensor(vec![1.0, 2.0], &[2], true).unwrap();
        let y = x.exp();
        assert!(!y.requires_grad());
    }

    #[test]
    fn cross_tape_ops_are_rejected() {
        let a: Tape<f32> = Tape::new();
        let b: Tape<f32> = Tape::new();
        let x = a.tensor(vec![1.0], &[1], true).unwrap();
        let y = b.tensor(vec![1.0], &[1], true).unwrap();
        assert!(matches!(x.add(&y), Err(Error::Contract(_))));
    }
}
