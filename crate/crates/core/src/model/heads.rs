// SPDX-License-Identifier: Apache-2.0

//! Classification and box-regression subnets shared across pyramid levels.

use rand::Rng;

use super::nn::{Conv, Init};
use crate::tensor::{Float, Graph, ParamStore, Var};

/// Prior probability encoded in the classifier's initial bias.
pub const PRIOR: f64 = 0.01;

/// Four 3x3 conv + ReLU stages and a final unactivated 3x3 conv.
#[derive(Clone, Debug)]
pub struct Subnet {
    pub trunk: Vec<Conv>,
    pub out: Conv,
}

impl Subnet {
    fn new<T: Float>(store: &mut ParamStore<T>, name: &str, c: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        // a fixed small std shrinks the signal geometrically through narrow trunks
        let trunk =
            (0..4).map(|i| Conv::new(store, &format!("{name}.conv{i}"), c, c, 3, 1, true, Init::Kaiming, rng)).collect();
        let out = Conv::new(store, &format!("{name}.out"), c, outputs, 3, 1, true, Init::Normal(0.01), rng);
        Self { trunk, out }
    }

    pub fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, x: Var) -> Var {
        let mut x = x;
        for c in &self.trunk {
            x = g.relu(c.forward(g, s, x));
        }
        self.out.forward(g, s, x)
    }
}

#[derive(Clone, Debug)]
pub struct Heads {
    pub cls: Subnet,
    pub reg: Subnet,
    pub anchors: usize,
    pub classes: usize,
}

impl Heads {
    pub fn new<T: Float>(store: &mut ParamStore<T>, c: usize, anchors: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let cls = Subnet::new(store, "head.cls", c, anchors * classes, rng);
        let prior = -((1.0 - PRIOR) / PRIOR).ln();
        let bias = cls.out.bias.expect("head convs carry bias");
        store.value_mut(bias).data_mut().iter_mut().for_each(|v| *v = T::of(prior));
        let reg = Subnet::new(store, "head.reg", c, anchors * 4, rng);
        Self { cls, reg, anchors, classes }
    }

    /// Class logits `[N, A*K, H, W]` (channel `a*K + k`) and deltas
    /// `[N, A*4, H, W]` (channel `a*4 + j`).
    pub fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, x: Var) -> (Var, Var) {
        (self.cls.forward(g, s, x), self.reg.forward(g, s, x))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::tensor::{Array, ParamId};

    fn setup(seed: u64) -> (ParamStore<f64>, Heads, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let heads = Heads::new(&mut store, 8, 9, 2, &mut rng);
        (store, heads, rng)
    }

    fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
        let d = Normal::new(0.0, 1.0).unwrap();
        Array::from_fn(shape, |_| d.sample(rng))
    }

    fn zero(store: &mut ParamStore<f64>, id: ParamId) {
        store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    #[test]
    fn zero_final_weights_give_the_prior_and_zero_deltas() {
        let (mut store, heads, mut rng) = setup(0);
        zero(&mut store, heads.cls.out.weight);
        zero(&mut store, heads.reg.out.weight);
        let g = Graph::<f64>::inference();
        let (cls, reg) = heads.forward(&g, &store, g.input(randn(&[2, 8, 5, 5], &mut rng), false));
        assert_eq!(g.shape(cls), vec![2, 18, 5, 5]);
        assert_eq!(g.shape(reg), vec![2, 36, 5, 5]);
        for &z in g.value(cls).data() {
            assert!((1.0 / (1.0 + (-z).exp()) - PRIOR).abs() < 1e-12);
        }
        assert!(g.value(reg).data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn subnets_share_no_parameters() {
        let (store, heads, _) = setup(1);
        let ids = |s: &Subnet| {
            let mut v: Vec<_> = s.trunk.iter().chain([&s.out]).flat_map(|c| [Some(c.weight), c.bias]).flatten().collect();
            v.sort_by_key(|id| id.index());
            v
        };
        let (a, b) = (ids(&heads.cls), ids(&heads.reg));
        assert!(a.iter().all(|id| !b.contains(id)));
        assert!(a.iter().all(|&id| store.name(id).starts_with("head.cls")));
        assert!(b.iter().all(|&id| store.name(id).starts_with("head.reg")));
    }

    #[test]
    fn shifting_the_feature_shifts_interior_outputs() {
        let (store, heads, mut rng) = setup(2);
        let (h, w) = (12, 12);
        let x = randn(&[1, 8, h, w], &mut rng);
        // shift right by one column, filling the new column with noise
        let mut xs = randn(&[1, 8, h, w], &mut rng);
        for c in 0..8 {
            for y in 0..h {
                for xx in 1..w {
                    xs.data_mut()[(c * h + y) * w + xx] = x.data()[(c * h + y) * w + xx - 1];
                }
            }
        }
        let eval = |x: &Array<f64>| {
            let g = Graph::<f64>::inference();
            let (cls, reg) = heads.forward(&g, &store, g.input(x.clone(), false));
            (g.value(cls).as_ref().clone(), g.value(reg).as_ref().clone())
        };
        let (c0, r0) = eval(&x);
        let (c1, r1) = eval(&xs);
        // five stacked 3x3 convs see five pixels each way
        let m = 5;
        for (a, b) in [(&c0, &c1), (&r0, &r1)] {
            let ch = a.shape()[1];
            for c in 0..ch {
                for y in m..h - m {
                    for xx in m + 1..w - m {
                        let (u, v) = (a.data()[(c * h + y) * w + xx - 1], b.data()[(c * h + y) * w + xx]);
                        assert!((u - v).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
