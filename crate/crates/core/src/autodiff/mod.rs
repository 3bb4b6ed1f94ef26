//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation eagerly: values are computed as nodes
//! are pushed, and each node that depends on a differentiable input keeps a
//! closure that maps its output gradient onto its inputs. Calling
//! [`Graph::backward`] walks the tape in reverse once.

mod lstm;
mod ops;

use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use lstm::LstmWeights;
pub use ops::NO_INDEX;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) type Grads<T> = Vec<Option<Tensor<T>>>;
type Backward<T> = Box<dyn Fn(&Tensor<T>, &[Node<T>], &mut Grads<T>)>;

pub struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) needs_grad: bool,
    back: Option<Backward<T>>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    bindings: HashMap<(u64, ParamId), Var>,
    grads: Grads<T>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: HashMap::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; gradients are not tracked through it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Differentiable leaf whose gradient is retained after [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            back: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a trainable parameter; repeated binds of the same parameter reuse one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.bind(store, id, true)
    }

    /// Binds a parameter as a constant (frozen weights still pass gradients to their inputs).
    pub fn frozen(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.bind(store, id, false)
    }

    pub fn bind(&mut self, store: &ParamStore<T>, id: ParamId, trainable: bool) -> Var {
        let key = (store.uid(), id);
        if let Some(&v) = self.bindings.get(&key) {
            return v;
        }
        let v = self.leaf(store.get(id).clone(), trainable);
        self.bindings.insert(key, v);
        v
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        back: impl Fn(&Tensor<T>, &[Node<T>], &mut Grads<T>) + 'static,
    ) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            needs_grad,
            back: if needs_grad {
                Some(Box::new(back))
            } else {
                None
            },
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a single-element `loss`. Gradients of leaves are kept.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward needs a scalar loss"
        );
        let mut grads: Grads<T> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            self.grads = grads;
            return;
        }
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(back) = &self.nodes[i].back else {
                continue;
            };
            if let Some(g) = grads[i].take() {
                back(&g, &self.nodes, &mut grads);
            }
        }
        self.grads = grads;
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter of `store` bound in this graph, indexed by [`ParamId`].
    pub fn param_grads(&self, store: &ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = (0..store.len()).map(|_| None).collect();
        for (&(uid, id), &v) in &self.bindings {
            if uid == store.uid() {
                out[id.0] = self.grad(v).cloned();
            }
        }
        out
    }
}

/// Adds into the gradient slot of `id`, allocating zeros on first touch.
pub(crate) fn acc_into<T: Scalar>(
    grads: &mut Grads<T>,
    nodes: &[Node<T>],
    id: usize,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[id].needs_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| Tensor::zeros(nodes[id].value.shape()));
    f(slot.data_mut());
}

/// Adds a freshly computed gradient tensor into the slot of `id`.
pub(crate) fn acc_with<T: Scalar>(
    grads: &mut Grads<T>,
    nodes: &[Node<T>],
    id: usize,
    f: impl FnOnce() -> Tensor<T>,
) {
    if !nodes[id].needs_grad {
        return;
    }
    let t = f();
    match &mut grads[id] {
        Some(g) => g.add_assign(&t),
        slot @ None => *slot = Some(t.reshaped(nodes[id].value.shape())),
    }
}
