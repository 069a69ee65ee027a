//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles along
//! with a vector-Jacobian product closure. [`Tape::backward`] walks the record
//! in reverse creation order, which is a valid topological order because a
//! node can only depend on nodes created before it.
//!
//! A tape is single-threaded. Parallel work uses one tape per thread and
//! reduces the resulting gradients afterwards.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{invalid_shape, Result};

use super::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    tracked: bool,
}

pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a differentiable input.
    pub fn leaf(&self, value: impl Into<Arc<Tensor<T>>>) -> Var {
        self.push_node(value.into(), Vec::new(), None, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: impl Into<Arc<Tensor<T>>>) -> Var {
        self.push_node(value.into(), Vec::new(), None, false)
    }

    pub fn value(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Value of a single-element variable.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].tracked
    }

    fn push_node(
        &self,
        value: Arc<Tensor<T>>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        tracked: bool,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            tracked,
        });
        Var(nodes.len() - 1)
    }

    /// Records the result of an operation. `backward` receives the gradient
    /// of the output and a per-parent flag telling which input gradients are
    /// needed; it returns one optional gradient per parent.
    pub(crate) fn push<F>(&self, value: Tensor<T>, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        debug_assert!(value.is_finite(), "non-finite value produced on tape");
        let tracked = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].tracked)
        };
        let backward: Option<BackwardFn<T>> = if tracked {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push_node(
            Arc::new(value),
            parents.iter().map(|p| p.0).collect(),
            backward,
            tracked,
        )
    }

    /// Back-propagates from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(invalid_shape(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(root_value.shape().to_vec(), T::one()));
        for id in (0..=root.0).rev() {
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].tracked).collect();
            let parent_grads = bw(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let (true, Some(pg)) = (need, pg) else {
                    continue;
                };
                debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                match grads[p].as_mut() {
                    Some(acc) => {
                        for (a, &b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    None => grads[p] = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar with respect to the leaves of a tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Gradient for `v`, or zeros shaped like `like` if nothing flowed there.
    pub fn take_or_zeros(&mut self, v: Var, like: &[usize]) -> Tensor<T> {
        self.take(v).unwrap_or_else(|| Tensor::zeros(like.to_vec()))
    }
}
