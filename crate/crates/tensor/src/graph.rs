//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding the closure that maps the output gradient
//! to parent gradients. Nodes whose parents all lack `requires_grad` store no
//! closure, so frozen sub-networks cost nothing on the backward pass beyond
//! the activations needed by trainable descendants.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::{Scalar, Tensor};

pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    shape: Vec<usize>,
}

#[derive(Default)]
struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// A recording context. Cheap to clone; clones share the tape.
pub struct Graph<T> {
    tape: Rc<RefCell<Tape<T>>>,
}

impl<T> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Self {
            tape: Rc::clone(&self.tape),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A value recorded on a [`Graph`].
pub struct Var<T> {
    pub(crate) id: usize,
    pub(crate) value: Rc<Tensor<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) graph: Graph<T>,
}

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            value: Rc::clone(&self.value),
            requires_grad: self.requires_grad,
            graph: self.graph.clone(),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            tape: Rc::new(RefCell::new(Tape { nodes: Vec::new() })),
        }
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(
        &self,
        value: Tensor<T>,
        requires_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Var<T> {
        let mut tape = self.tape.borrow_mut();
        let id = tape.nodes.len();
        tape.nodes.push(Node {
            requires_grad,
            parents,
            backward,
            shape: value.shape().to_vec(),
        });
        Var {
            id,
            value: Rc::new(value),
            requires_grad,
            graph: self.clone(),
        }
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, true, Vec::new(), None)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, false, Vec::new(), None)
    }

    pub fn scalar(&self, v: f64) -> Var<T> {
        self.constant(Tensor::scalar(T::of(v)))
    }

    /// Records an op. The closure is dropped when no parent needs a gradient.
    pub(crate) fn op(
        &self,
        value: Tensor<T>,
        parents: &[&Var<T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<T> {
        for p in parents {
            debug_assert!(Rc::ptr_eq(&p.graph.tape, &self.tape), "vars from different graphs");
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad);
        let ids = parents.iter().map(|p| p.id).collect();
        let bw: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(value, requires_grad, ids, bw)
    }

    /// Gradients of a one-element `output` with respect to every tracked leaf.
    pub fn backward(&self, output: &Var<T>) -> Gradients<T> {
        assert_eq!(output.value.numel(), 1, "backward needs a scalar output");
        self.backward_with(output, Tensor::ones(output.value.shape()))
    }

    /// Vector-Jacobian product seeded with `seed` (same shape as `output`).
    pub fn backward_with(&self, output: &Var<T>, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), output.value.shape(), "seed shape");
        let tape = self.tape.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(output.id + 1, || None);
        let mut leaves = HashMap::new();
        if !output.requires_grad {
            return Gradients { leaves };
        }
        grads[output.id] = Some(seed);
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &tape.nodes[id];
            match &node.backward {
                None => {
                    if node.requires_grad {
                        leaves.insert(id, g);
                    }
                }
                Some(bw) => {
                    let mask: Vec<bool> = node
                        .parents
                        .iter()
                        .map(|&p| tape.nodes[p].requires_grad)
                        .collect();
                    let pg = bw(&g, &mask);
                    debug_assert_eq!(pg.len(), node.parents.len());
                    for ((&p, pgrad), need) in node.parents.iter().zip(pg).zip(mask) {
                        let Some(pgrad) = pgrad else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(pgrad.shape(), tape.nodes[p].shape.as_slice());
                        match &mut grads[p] {
                            Some(acc) => acc.add_assign(&pgrad),
                            slot @ None => *slot = Some(pgrad),
                        }
                    }
                }
            }
        }
        Gradients { leaves }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; `None` when `v` did not influence the output.
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.leaves.get(&v.id)
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        self.leaves.remove(&v.id)
    }

    /// Gradient for `v`, zeros when it did not reach the output.
    pub fn get_or_zeros(&self, v: &Var<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value.shape()))
    }
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<T> {
        self.graph.constant((*self.value).clone())
    }

    pub fn item(&self) -> T {
        self.value.item()
    }
}
