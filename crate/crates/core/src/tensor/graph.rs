// SPDX-License-Identifier: Apache-2.0

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::array::{Array, Float};
use super::params::{ParamId, ParamStore};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Array<T>, &[bool]) -> Vec<Option<Array<T>>>>;

struct Node<T> {
    value: Rc<Array<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Define-by-run tape for reverse-mode differentiation.
///
/// Ops append nodes; [`Graph::backward`] walks them in reverse. A graph is
/// single-use: backward consumes the recorded closures.
pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    leaves: HashMap<usize, Array<T>>,
    params: Vec<(ParamId, Array<T>)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a leaf created with [`Graph::input`] (`requires_grad = true`).
    pub fn wrt(&self, v: Var) -> Option<&Array<T>> {
        self.leaves.get(&v.0)
    }

    /// Per-parameter gradients, summed over every use of the parameter.
    pub fn params(&self) -> &[(ParamId, Array<T>)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Array<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn into_params(self) -> Vec<(ParamId, Array<T>)> {
        self.params
    }
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: true }
    }

    /// A graph that records values only; backward is unavailable.
    pub fn inference() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn leaf(&self, value: Rc<Array<T>>, needs_grad: bool, param: Option<ParamId>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            needs_grad: needs_grad && self.grad_enabled,
            param,
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: Array<T>) -> Var {
        self.leaf(Rc::new(value), false, None)
    }

    pub fn input(&self, value: Array<T>, requires_grad: bool) -> Var {
        self.leaf(Rc::new(value), requires_grad, None)
    }

    /// Binds a trainable parameter as a leaf; its gradient is reported under `id`.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.leaf(store.value_rc(id), store.trainable(id), Some(id))
    }

    pub fn value(&self, v: Var) -> Rc<Array<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    /// Records an op. The backward closure receives the output gradient and
    /// which parents need gradients, and returns one optional gradient per parent.
    pub(crate) fn push(
        &self,
        value: Array<T>,
        parents: &[Var],
        backward: impl FnOnce(&Array<T>, &[bool]) -> Vec<Option<Array<T>>> + 'static,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs = self.grad_enabled && parents.iter().any(|p| nodes[p.0].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward: if needs { Some(Box::new(backward)) } else { None },
            needs_grad: needs,
            param: None,
        });
        Var(nodes.len() - 1)
    }

    /// Reverse pass seeded with `d(loss)/d(var)` for each `(var, grad)` pair.
    pub fn backward(&self, seeds: &[(Var, Array<T>)]) -> Gradients<T> {
        assert!(self.grad_enabled, "backward on an inference graph");
        let n = self.nodes.borrow().len();
        let mut grads: Vec<Option<Array<T>>> = (0..n).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.value(*v).shape(), "seed gradient shape mismatch");
            accumulate(&mut grads[v.0], g.clone());
        }
        let mut leaves = HashMap::new();
        let mut param_acc: Vec<(ParamId, Array<T>)> = Vec::new();
        for i in (0..n).rev() {
            let Some(grad) = grads[i].take() else { continue };
            let (backward, parents, needs, param) = {
                let mut nodes = self.nodes.borrow_mut();
                let backward = nodes[i].backward.take();
                let parents = nodes[i].parents.clone();
                let needs: Vec<bool> = parents.iter().map(|&p| nodes[p].needs_grad).collect();
                (backward, parents, needs, nodes[i].param)
            };
            match backward {
                Some(f) => {
                    let pg = f(&grad, &needs);
                    debug_assert_eq!(pg.len(), parents.len());
                    for ((p, g), need) in parents.iter().zip(pg).zip(&needs) {
                        if let (Some(g), true) = (g, *need) {
                            accumulate(&mut grads[*p], g);
                        }
                    }
                }
                None => {
                    if !self.nodes.borrow()[i].needs_grad {
                        continue;
                    }
                    match param {
                        Some(id) => match param_acc.iter_mut().find(|(p, _)| *p == id) {
                            Some((_, acc)) => acc.add_assign(&grad),
                            None => param_acc.push((id, grad)),
                        },
                        None => {
                            leaves.insert(i, grad);
                        }
                    }
                }
            }
        }
        param_acc.sort_by_key(|(id, _)| *id);
        Gradients { leaves, params: param_acc }
    }
}

fn accumulate<T: Float>(slot: &mut Option<Array<T>>, g: Array<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}
