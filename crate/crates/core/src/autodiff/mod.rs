//! Minimal reverse-mode automatic differentiation over [`ndarray::ArrayD`].
//!
//! Every operation builds a node in a DAG; `backward()` walks the graph in
//! reverse creation order and accumulates gradients into the leaves. When no
//! input requires a gradient the node is created without parents or a
//! backward closure, so value-only evaluation (finite differences, inference)
//! carries no tape overhead.

mod conv;
mod linear;
mod ops;

use crate::scalar::Scalar;
use ndarray::ArrayD;
use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

type BackwardFn<F> = Box<dyn Fn(&ArrayD<F>, &[Tensor<F>]) -> Vec<Option<ArrayD<F>>>>;

pub struct Node<F: Scalar> {
    id: usize,
    value: ArrayD<F>,
    grad: RefCell<Option<ArrayD<F>>>,
    parents: Vec<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
    requires_grad: bool,
}

/// Shared handle to a graph node. Cloning is cheap.
pub struct Tensor<F: Scalar>(Rc<Node<F>>);

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<F: Scalar> Tensor<F> {
    /// Leaf that does not participate in differentiation (inputs, constants).
    pub fn constant(value: ArrayD<F>) -> Self {
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        }))
    }

    /// Leaf that accumulates a gradient (model parameters).
    pub fn leaf(value: ArrayD<F>) -> Self {
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
        }))
    }

    pub(crate) fn from_op(
        value: ArrayD<F>,
        parents: Vec<Tensor<F>>,
        backward: BackwardFn<F>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        if !requires_grad {
            // Value-only path: drop the tape.
            return Tensor::constant(value);
        }
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            grad: RefCell::new(None),
            parents,
            backward: Some(backward),
            requires_grad: true,
        }))
    }

    pub fn value(&self) -> &ArrayD<F> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Gradient accumulated by the last `backward()` call, if any.
    pub fn grad(&self) -> Option<ArrayD<F>> {
        self.0.grad.borrow().clone()
    }

    /// Scalar value of a 0-d (or single-element) tensor.
    pub fn scalar(&self) -> F {
        debug_assert_eq!(self.0.value.len(), 1);
        *self.0.value.iter().next().expect("scalar tensor")
    }

    fn accumulate(&self, g: ArrayD<F>) {
        debug_assert_eq!(g.shape(), self.0.value.shape());
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => *acc += &g,
            None => {
                *slot = Some(if g.is_standard_layout() {
                    g
                } else {
                    g.as_standard_layout().to_owned()
                })
            }
        }
    }

    /// Reverse pass from this (scalar) tensor. Gradients land in every
    /// reachable leaf with `requires_grad`.
    pub fn backward(&self) {
        let mut order: Vec<Tensor<F>> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.0.requires_grad || !seen.insert(t.0.id) {
                continue;
            }
            for p in &t.0.parents {
                stack.push(p.clone());
            }
            order.push(t);
        }
        // Reverse topological order: ids increase monotonically at creation.
        order.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        self.accumulate(ArrayD::ones(self.0.value.raw_dim()));
        for node in order {
            let Some(bk) = node.0.backward.as_ref() else {
                continue;
            };
            let g = node.0.grad.borrow().clone();
            let Some(g) = g else { continue };
            let parent_grads = bk(&g, &node.0.parents);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (p, pg) in node.0.parents.iter().zip(parent_grads) {
                if let (true, Some(pg)) = (p.0.requires_grad, pg) {
                    p.accumulate(pg);
                }
            }
        }
    }

    /// Clears an accumulated gradient (leaves are reused across steps only
    /// through the parameter store, so this is rarely needed).
    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }
}
