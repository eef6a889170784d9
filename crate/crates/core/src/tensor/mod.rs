//! Reverse-mode automatic differentiation on dense f64 tensors.
//!
//! Tensors are immutable handles onto reference-counted nodes; every operation
//! records its inputs, and [`Tensor::backward`] walks the recorded graph from a
//! scalar output back to the leaves. Gradients land on leaves that were marked
//! with [`Tensor::set_requires_grad`] and are *overwritten* by each backward
//! pass (the graph itself stays intact, so calling `backward` on several
//! scalars built from the same leaves yields each scalar's own derivative —
//! this is how per-class Jacobian rows are extracted).
//!
//! Everything is f64. The engine exists to be verifiable: every differentiable
//! primitive is covered by a central-finite-difference oracle in the tests, and
//! `log`/`recip` clamp their argument at [`CLAMP_MIN`] so probability-space
//! expressions stay finite even on saturated softmax outputs.

mod ops;
pub(crate) use ops::Op;

pub mod fd;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

/// Lower clamp applied inside `log` and `recip`, and everywhere a probability
/// is inverted. Pinned once so the trainer, the FIM ops, and the attacks all
/// agree bit-for-bit.
pub const CLAMP_MIN: f64 = 1e-12;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f64>>>,
    op: Op,
}

/// Handle to one node of the computation graph. Cloning is cheap (an `Rc`
/// bump) and clones refer to the same node.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("leaf", &self.is_leaf())
            .finish()
    }
}

impl Tensor {
    /// Leaf tensor from raw data. `shape` must multiply out to `data.len()`.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} wants {} elements, data has {}",
            shape,
            numel,
            data.len()
        );
        Tensor::leaf(data, shape.to_vec())
    }

    /// Scalar leaf (shape `[]`).
    pub fn scalar(v: f64) -> Tensor {
        Tensor::leaf(vec![v], vec![])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::leaf(vec![v; numel], shape.to_vec())
    }

    fn leaf(data: Vec<f64>, shape: Vec<usize>) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad: Cell::new(false),
                grad: RefCell::new(None),
                op: Op::Leaf,
            }),
        }
    }

    /// Non-leaf node. When no input participates in differentiation the op is
    /// dropped on the floor, so inference-only graphs free their history as
    /// they go.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let op = if op.inputs().iter().any(|t| t.needs_grad()) {
            op
        } else {
            Op::Leaf
        };
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad: Cell::new(false),
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on shape {:?}", self.shape());
        self.inner.data[0]
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.inner.op, Op::Leaf)
    }

    /// Mark a leaf as a differentiation target. Panics on non-leaves: interior
    /// gradients are never retained, so asking for them is a bug upstream.
    pub fn set_requires_grad(&self, yes: bool) {
        assert!(
            self.is_leaf(),
            "requires_grad is only meaningful on leaf tensors"
        );
        self.inner.requires_grad.set(yes);
    }

    /// Builder-style variant of [`set_requires_grad`].
    pub fn tracked(self) -> Tensor {
        self.set_requires_grad(true);
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    fn needs_grad(&self) -> bool {
        match self.inner.op {
            Op::Leaf => self.inner.requires_grad.get(),
            // Non-leaves only keep their op when some ancestor required grad.
            _ => true,
        }
    }

    /// Gradient written by the most recent `backward` that reached this leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Copy of this tensor's values as a fresh untracked leaf.
    pub fn detach(&self) -> Tensor {
        Tensor::leaf(self.inner.data.clone(), self.inner.shape.clone())
    }

    /// Reverse-mode sweep from a scalar output. Accumulates into every
    /// gradient-requiring leaf reachable from `self`, overwriting whatever a
    /// previous sweep left there. Panics if `self` is not a scalar.
    pub fn backward(&self) {
        assert_eq!(
            self.numel(),
            1,
            "backward() requires a scalar output, got shape {:?}",
            self.shape()
        );
        if !self.needs_grad() {
            // Constant graph: nothing requires grad, nothing to do.
            return;
        }
        let order = topo_order(self);
        let mut sink = GradSink {
            grads: HashMap::new(),
        };
        sink.grads.insert(self.inner.id, vec![1.0]);
        // `order` lists producers before consumers; walking it reversed means
        // every node's gradient is complete before it is distributed.
        for node in order.iter().rev() {
            let Some(g) = sink.grads.remove(&node.inner.id) else {
                continue;
            };
            if node.is_leaf() {
                if node.inner.requires_grad.get() {
                    *node.inner.grad.borrow_mut() = Some(g);
                }
                continue;
            }
            ops::backward_step(node, &g, &mut sink);
        }
    }
}

pub(crate) struct GradSink {
    grads: HashMap<u64, Vec<f64>>,
}

impl GradSink {
    /// Accumulate `contribution` into `target`'s pending gradient.
    pub(crate) fn add(&mut self, target: &Tensor, contribution: Vec<f64>) {
        debug_assert_eq!(contribution.len(), target.numel());
        if !target.needs_grad() {
            return;
        }
        match self.grads.entry(target.inner.id) {
            std::collections::hash_map::Entry::Occupied(mut e) => {
                for (a, b) in e.get_mut().iter_mut().zip(&contribution) {
                    *a += b;
                }
            }
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(contribution);
            }
        }
    }
}

/// Iterative post-order DFS: output order has every node after its inputs.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    // Stack frames: (node, next input index to descend into).
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.inner.id);
    while let Some((node, idx)) = stack.pop() {
        let inputs = node.inner.op.inputs();
        if idx < inputs.len() {
            let child = inputs[idx].clone();
            stack.push((node, idx + 1));
            if visited.insert(child.inner.id) {
                stack.push((child, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}
