// SPDX-License-Identifier: Apache-2.0

use std::rc::Rc;

use super::array::{Array, Float};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
struct Entry<T> {
    name: String,
    value: Rc<Array<T>>,
    trainable: bool,
}

/// Named, ordered collection of model parameters.
#[derive(Clone)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(Entry { name, value: Rc::new(value), trainable: true });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Array<T> {
        &self.entries[id.0].value
    }

    pub(crate) fn value_rc(&self, id: ParamId) -> Rc<Array<T>> {
        Rc::clone(&self.entries[id.0].value)
    }

    /// Mutable access; copies the array if a live graph still holds it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Array<T> {
        Rc::make_mut(&mut self.entries[id.0].value)
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Ids whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.name.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
    }

    /// Same parameters converted to another element type.
    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), value: Rc::new(e.value.cast()), trainable: e.trainable })
                .collect(),
        }
    }
}

/// Adaptive-moment optimizer state.
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Option<Vec<T>>>,
    v: Vec<Option<Vec<T>>>,
}

impl<T: Float> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Array<T>)]) {
        self.step += 1;
        if self.m.len() < store.len() {
            self.m.resize_with(store.len(), || None);
            self.v.resize_with(store.len(), || None);
        }
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let step_size = T::of(self.lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(self.eps);
        let wd = T::of(self.weight_decay);
        for (id, g) in grads {
            if !store.trainable(*id) {
                continue;
            }
            let n = g.len();
            let m = self.m[id.0].get_or_insert_with(|| vec![T::zero(); n]);
            let v = self.v[id.0].get_or_insert_with(|| vec![T::zero(); n]);
            let p = store.value_mut(*id).data_mut();
            for i in 0..n {
                let gi = g.data()[i] + wd * p[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                p[i] -= step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
    }
}
