//! Reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Var`] is a reference-counted node holding its forward value and, when
//! any input requires a gradient, the operation that produced it. Graphs are
//! built per thread and per sample; nothing is shared between threads, so
//! batch gradients are computed by running independent graphs and summing.
//!
//! When no input requires a gradient the operation is not recorded, so an
//! inference pass keeps only the tensors the caller still holds.

mod kernels;
mod ops;

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::tensor::{Real, Tensor};

pub use ops::Reduction;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

struct Node<T: Real> {
    id: usize,
    value: Tensor<T>,
    requires_grad: bool,
    op: Option<ops::Op<T>>,
}

#[derive(Clone)]
pub struct Var<T: Real = f32>(Rc<Node<T>>);

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("value", &self.0.value)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Real> Var<T> {
    fn make(value: Tensor<T>, requires_grad: bool, op: Option<ops::Op<T>>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            op,
        }))
    }

    /// Value that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, None)
    }

    /// Leaf that accumulates a gradient.
    pub fn leaf(value: Tensor<T>) -> Self {
        Self::make(value, true, None)
    }

    pub(crate) fn from_op(value: Tensor<T>, op: ops::Op<T>) -> Self {
        if op.parents().iter().any(|p| p.requires_grad()) {
            Self::make(value, true, Some(op))
        } else {
            Self::make(value, false, None)
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Gradients of this (one-element) value with respect to every node that
    /// requires one.
    pub fn backward(&self) -> Gradients<T> {
        let seed = Tensor::ones(self.shape());
        self.backward_with(seed)
    }

    /// Vector-Jacobian product seeded with `seed` (same shape as `self`).
    pub fn backward_with(&self, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(), "backward seed shape");
        let mut grads: HashMap<usize, Tensor<T>> = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads };
        }
        grads.insert(self.id(), seed);
        for var in topo_order(self).into_iter().rev() {
            let Some(op) = var.0.op.as_ref() else {
                continue;
            };
            let Some(g) = grads.get(&var.id()).cloned() else {
                continue;
            };
            let mut acc = |target: &Var<T>, delta: Tensor<T>| {
                if !target.requires_grad() {
                    return;
                }
                match grads.get_mut(&target.id()) {
                    Some(existing) => existing.add_assign(&delta),
                    None => {
                        grads.insert(target.id(), delta);
                    }
                }
            };
            op.backward(&var.0.value, &g, &mut acc);
        }
        Gradients { grads }
    }
}

/// Nodes reachable from `root` through gradient-carrying edges, parents
/// before children.
fn topo_order<T: Real>(root: &Var<T>) -> Vec<Var<T>> {
    let mut order = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut stack: Vec<(Var<T>, bool)> = vec![(root.clone(), false)];
    while let Some((var, expanded)) = stack.pop() {
        if expanded {
            order.push(var);
            continue;
        }
        if !seen.insert(var.id()) {
            continue;
        }
        stack.push((var.clone(), true));
        if let Some(op) = var.0.op.as_ref() {
            for p in op.parents() {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}

pub struct Gradients<T: Real = f32> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&var.id())
    }

    /// Gradient for `var`, zero when it did not influence the output.
    pub fn wrt(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

#[cfg(test)]
mod tests;
