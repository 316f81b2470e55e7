//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) onto a contiguous row-major buffer.
//! Operations on tensors that require gradients record a backward node that
//! references the operands; [`Tensor::backward`] walks that graph in reverse
//! topological order and accumulates gradients into leaf parameters.
//!
//! The element type is generic over [`Scalar`]: models train in `f32`, and the
//! gradient checks run the same code in `f64`.
//!
//! Graph recording can be switched off for the current thread with
//! [`no_grad`], which is what inference uses.

mod kernels;
mod ops;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::AddAssign;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use parking_lot::{Mutex, RwLock, RwLockReadGuard};

use crate::error::TensorError;

pub use ops::BroadcastSide;

/// Floating point element type usable by the engine.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + 'static
{
    /// Bit width of the storage type, for diagnostics.
    const BITS: u32;
}

impl Scalar for f32 {
    const BITS: u32 = 32;
}

impl Scalar for f64 {
    const BITS: u32 = 64;
}

/// Converts an `f64` literal into the engine's element type.
#[inline]
pub fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("literal representable in scalar type")
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Returns whether operations on this thread currently record a graph.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct Node<T: Scalar> {
    op: &'static str,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    node: Option<Node<T>>,
    spent: AtomicBool,
}

/// N-dimensional array handle. Cloning is shallow.
pub struct Tensor<T: Scalar = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.inner.data.read();
        let preview: Vec<T> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn build(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
                node,
                spent: AtomicBool::new(false),
            }),
        }
    }

    /// Constant tensor (never receives gradients).
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self, TensorError> {
        check_shape("new", &data, shape)?;
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// Trainable leaf tensor.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self, TensorError> {
        check_shape("parameter", &data, shape)?;
        Ok(Self::build(data, shape.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![T::zero(); numel(shape)], shape.to_vec(), false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::build(vec![value; numel(shape)], shape.to_vec(), false, None)
    }

    /// Rank-0 constant.
    pub fn scalar(value: T) -> Self {
        Self::build(vec![value], Vec::new(), false, None)
    }

    /// Builds an op result. A graph node is attached only when recording is
    /// enabled and at least one parent needs gradients.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        op: &'static str,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            let node = Node {
                op,
                parents,
                backward,
            };
            Self::build(data, shape, true, Some(node))
        } else {
            Self::build(data, shape, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    /// Tag of the op that produced this tensor, if it is a graph node.
    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.op)
    }

    /// Read access to the values.
    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.inner.data.read()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.read().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T, TensorError> {
        let data = self.inner.data.read();
        if data.len() != 1 {
            return Err(TensorError::NotScalar {
                op: "item",
                shape: self.shape().to_vec(),
            });
        }
        Ok(data[0])
    }

    /// Mutates values in place. Only meant for parameter updates between
    /// graph constructions (optimizer steps, clipping, loading).
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        let mut data = self.inner.data.write();
        f(&mut data);
    }

    /// Replaces the values with `values`, which must have the same length.
    pub fn assign(&self, values: &[T]) -> Result<(), TensorError> {
        let mut data = self.inner.data.write();
        if data.len() != values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "assign",
                lhs: self.shape().to_vec(),
                rhs: vec![values.len()],
            });
        }
        data.copy_from_slice(values);
        Ok(())
    }

    /// Copy of the accumulated gradient, if any has been written.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.inner.grad.lock().is_some()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock() = None;
    }

    /// Same values, no graph linkage.
    pub fn detach(&self) -> Self {
        Self::build(self.to_vec(), self.shape().to_vec(), false, None)
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.inner.grad.lock();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from this scalar, adding gradients into every
    /// reachable leaf that requires them.
    ///
    /// Each loss can be back-propagated once; a second call reports
    /// [`TensorError::GraphSpent`].
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.shape().to_vec(),
            });
        }
        if !self.requires_grad() {
            return Err(TensorError::NoGraph);
        }
        if self.inner.spent.swap(true, Ordering::SeqCst) {
            return Err(TensorError::GraphSpent);
        }

        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);

        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.inner.node {
                None => t.accumulate_grad(&g),
                Some(node) => {
                    let parent_grads = (node.backward)(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (parent, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel(), "grad size for {}", node.op);
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => {
                                for (a, v) in acc.iter_mut().zip(pg) {
                                    *a += v;
                                }
                            }
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the differentiable subgraph rooted here.
    fn topological_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.inner.node {
                for p in &node.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

fn check_shape<T>(op: &'static str, data: &[T], shape: &[usize]) -> Result<(), TensorError> {
    if shape.contains(&0) || numel(shape) != data.len() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![data.len()],
        });
    }
    Ok(())
}

/// Zeroes the gradients of every tensor in `params`.
pub fn zero_grads<T: Scalar>(params: &[(String, Tensor<T>)]) {
    for (_, p) in params {
        p.zero_grad();
    }
}
