// SPDX-License-Identifier: Apache-2.0

//! Parameterised layers: each holds parameter ids into a [`ParamStore`] and
//! records its forward pass on a [`Graph`].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Array, Float, Graph, ParamId, ParamStore, Var};

/// How a fresh weight tensor is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// He-normal with fan-in.
    Kaiming,
    Normal(f64),
    Zeros,
}

fn fill<T: Float>(shape: &[usize], fan_in: usize, init: Init, rng: &mut impl Rng) -> Array<T> {
    let std = match init {
        Init::Kaiming => (2.0 / fan_in.max(1) as f64).sqrt(),
        Init::Normal(s) => s,
        Init::Zeros => return Array::zeros(shape),
    };
    let d = Normal::new(0.0, std).expect("finite std");
    Array::from_fn(shape, |_| T::of(d.sample(rng)))
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), fill(&[cout, cin, k, k], cin * k * k, init, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Array::zeros(&[cout])));
        Self { weight, bias, stride, pad: k / 2 }
    }

    pub fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(s, self.weight);
        let b = self.bias.map(|b| g.param(s, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize, groups: usize) -> Self {
        let groups = largest_divisor_at_most(channels, groups);
        Self {
            gamma: store.add(format!("{name}.gamma"), Array::full(&[channels], T::one())),
            beta: store.add(format!("{name}.beta"), Array::zeros(&[channels])),
            groups,
        }
    }

    pub fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, x: Var) -> Var {
        g.group_norm(x, g.param(s, self.gamma), g.param(s, self.beta), self.groups, 1e-5)
    }
}

fn largest_divisor_at_most(n: usize, k: usize) -> usize {
    (1..=k.min(n).max(1)).rev().find(|d| n % d == 0).unwrap_or(1)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), fill(&[cout, cin], cin, Init::Kaiming, rng)),
            bias: store.add(format!("{name}.bias"), Array::zeros(&[cout])),
        }
    }

    pub fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, x: Var) -> Var {
        g.linear(x, g.param(s, self.weight), Some(g.param(s, self.bias)))
    }
}

/// One-element learnable scalar.
pub fn scalar_param<T: Float>(store: &mut ParamStore<T>, name: &str, v: f64) -> ParamId {
    store.add(name, Array::from_vec(&[1], vec![T::of(v)]))
}
