// SPDX-License-Identifier: Apache-2.0

//! Cross-model fusion of the deformation feature with one pyramid level.
//!
//! Attention weights follow `s_ij = q_i . k_j`, normalised over `i` for each
//! output location `j`; see [`Graph::attention`].

use std::rc::Rc;

use rand::Rng;

use super::nn::{scalar_param, Conv, Init};
use crate::tensor::{Array, Float, Graph, ParamId, ParamStore, Var};

fn proj<T: Float>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Conv {
    let std = (1.0 / cin as f64).sqrt();
    Conv::new(store, name, cin, cout, 1, 1, true, Init::Normal(std), rng)
}

/// `x + gamma * Wo(attend(Wq x, Wk x, Wv x))`.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Conv,
    pub k: Conv,
    pub v: Conv,
    pub o: Conv,
    pub gamma: ParamId,
}

impl SelfAttention {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize, inner: usize, rng: &mut impl Rng) -> Self {
        Self {
            q: proj(store, &format!("{name}.q"), channels, inner, rng),
            k: proj(store, &format!("{name}.k"), channels, inner, rng),
            v: proj(store, &format!("{name}.v"), channels, inner, rng),
            o: proj(store, &format!("{name}.o"), inner, channels, rng),
            gamma: scalar_param(store, &format!("{name}.gamma"), 1.0),
        }
    }

    pub fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, x: Var) -> (Var, Rc<Array<T>>) {
        let (att, w) = g.attention(self.q.forward(g, s, x), self.k.forward(g, s, x), self.v.forward(g, s, x));
        let y = g.scale_by(self.o.forward(g, s, att), g.param(s, self.gamma));
        (g.add(x, y), w)
    }
}

/// `xi * Wm(attend(Wq f_de, Wk f_py, Wv f_py)) + f_py`.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub q: Conv,
    pub k: Conv,
    pub v: Conv,
    pub m: Conv,
    pub xi: ParamId,
}

impl CrossAttention {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, c_de: usize, c_py: usize, inner: usize, rng: &mut impl Rng) -> Self {
        Self {
            q: proj(store, &format!("{name}.q"), c_de, inner, rng),
            k: proj(store, &format!("{name}.k"), c_py, inner, rng),
            v: proj(store, &format!("{name}.v"), c_py, inner, rng),
            m: proj(store, &format!("{name}.m"), inner, c_py, rng),
            xi: scalar_param(store, &format!("{name}.xi"), 1.0),
        }
    }

    pub fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, f_de: Var, f_py: Var) -> (Var, Rc<Array<T>>) {
        let (att, w) = g.attention(self.q.forward(g, s, f_de), self.k.forward(g, s, f_py), self.v.forward(g, s, f_py));
        let mask = g.scale_by(self.m.forward(g, s, att), g.param(s, self.xi));
        (g.add(mask, f_py), w)
    }
}

/// Attention weights recorded during one fusion, `[N, HW(i), HW(j)]` each.
#[derive(Clone, Debug)]
pub struct FusionWeights<T> {
    pub de: Option<Rc<Array<T>>>,
    pub py: Rc<Array<T>>,
    pub cross: Option<Rc<Array<T>>>,
}

/// One level's fusion block: two self-attention branches and the cross block.
#[derive(Clone, Debug)]
pub struct Cmf {
    pub sa_de: SelfAttention,
    pub sa_py: SelfAttention,
    pub cross: CrossAttention,
}

impl Cmf {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        level: usize,
        c_py: usize,
        py_inner: usize,
        cross_inner: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let p = format!("cmf{level}");
        Self {
            sa_de: SelfAttention::new(store, &format!("{p}.sa_de"), 3, 3, rng),
            sa_py: SelfAttention::new(store, &format!("{p}.sa_py"), c_py, py_inner, rng),
            cross: CrossAttention::new(store, &format!("{p}.cross"), 3, c_py, cross_inner, rng),
        }
    }

    /// `f_de` is the deformation feature already pooled to the level's grid.
    pub fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, f_de: Var, p: Var) -> (Var, FusionWeights<T>) {
        let (de, w_de) = self.sa_de.forward(g, s, f_de);
        let (py, w_py) = self.sa_py.forward(g, s, p);
        let (out, w_x) = self.cross.forward(g, s, de, py);
        (out, FusionWeights { de: Some(w_de), py: w_py, cross: Some(w_x) })
    }

    /// Ablation path: heads see the self-attended pyramid level only.
    pub fn forward_detector_only<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, p: Var) -> (Var, FusionWeights<T>) {
        let (py, w_py) = self.sa_py.forward(g, s, p);
        (py, FusionWeights { de: None, py: w_py, cross: None })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
        let d = Normal::new(0.0, 1.0).unwrap();
        Array::from_fn(shape, |_| d.sample(rng))
    }

    fn set(store: &mut ParamStore<f64>, id: ParamId, v: f64) {
        store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = v);
    }

    fn randomize_biases(store: &mut ParamStore<f64>, convs: &[&Conv], rng: &mut ChaCha8Rng) {
        for c in convs {
            let id = c.bias.unwrap();
            let r = randn(store.value(id).shape(), rng);
            *store.value_mut(id) = r;
        }
    }

    /// 1x1 conv on `[C, P]` data by loops.
    fn project(store: &ParamStore<f64>, c: &Conv, x: &[f64], cin: usize, p: usize) -> Vec<f64> {
        let w = store.value(c.weight).data();
        let b = store.value(c.bias.unwrap()).data();
        let cout = b.len();
        let mut out = vec![0.0; cout * p];
        for o in 0..cout {
            for j in 0..p {
                out[o * p + j] = b[o] + (0..cin).map(|i| w[o * cin + i] * x[i * p + j]).sum::<f64>();
            }
        }
        out
    }

    fn block(rng: &mut ChaCha8Rng) -> (ParamStore<f64>, Cmf) {
        let mut store = ParamStore::new();
        let cmf = Cmf::new(&mut store, 3, 4, 2, 3, rng);
        (store, cmf)
    }

    fn run(cmf: &Cmf, store: &ParamStore<f64>, de: &Array<f64>, py: &Array<f64>) -> Vec<f64> {
        let g = Graph::<f64>::inference();
        let (out, _) = cmf.forward(&g, store, g.input(de.clone(), false), g.input(py.clone(), false));
        g.value(out).data().to_vec()
    }

    #[test]
    fn zero_gamma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let sa = SelfAttention::new(&mut store, "sa", 4, 2, &mut rng);
        set(&mut store, sa.gamma, 0.0);
        let x = randn(&[2, 4, 3, 3], &mut rng);
        let g = Graph::<f64>::inference();
        let (y, _) = sa.forward(&g, &store, g.input(x.clone(), false));
        assert_eq!(g.value(y).data(), x.data());
    }

    #[test]
    fn zero_xi_returns_enhanced_pyramid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut store, cmf) = block(&mut rng);
        set(&mut store, cmf.cross.xi, 0.0);
        let de = randn(&[1, 3, 3, 3], &mut rng);
        let py = randn(&[1, 4, 3, 3], &mut rng);
        let g = Graph::<f64>::inference();
        let (enh, _) = cmf.sa_py.forward(&g, &store, g.input(py.clone(), false));
        assert_eq!(run(&cmf, &store, &de, &py), g.value(enh).data().to_vec());
    }

    #[test]
    fn uniform_weights_average_the_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let sa = SelfAttention::new(&mut store, "sa", 4, 2, &mut rng);
        set(&mut store, sa.q.weight, 0.0);
        randomize_biases(&mut store, &[&sa.k, &sa.v], &mut rng);
        let x = randn(&[1, 4, 3, 3], &mut rng);
        let g = Graph::<f64>::inference();
        let xv = g.input(x.clone(), false);
        let (att, w) = g.attention(sa.q.forward(&g, &store, xv), sa.k.forward(&g, &store, xv), sa.v.forward(&g, &store, xv));
        assert!(w.data().iter().all(|&b| (b - 1.0 / 9.0).abs() < 1e-15));
        let v = project(&store, &sa.v, x.data(), 4, 9);
        let att = g.value(att);
        for c in 0..2 {
            let mean = v[c * 9..(c + 1) * 9].iter().sum::<f64>() / 9.0;
            for j in 0..9 {
                assert!((att.data()[c * 9 + j] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_by_two_fusion_matches_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut store, cmf) = block(&mut rng);
        let convs = [&cmf.sa_de.q, &cmf.sa_de.k, &cmf.sa_de.v, &cmf.sa_de.o, &cmf.sa_py.q, &cmf.sa_py.k];
        randomize_biases(&mut store, &convs, &mut rng);
        let convs = [&cmf.sa_py.v, &cmf.sa_py.o, &cmf.cross.q, &cmf.cross.k, &cmf.cross.v, &cmf.cross.m];
        randomize_biases(&mut store, &convs, &mut rng);
        set(&mut store, cmf.sa_de.gamma, 0.7);
        set(&mut store, cmf.sa_py.gamma, -0.4);
        set(&mut store, cmf.cross.xi, 1.3);
        let de = randn(&[1, 3, 2, 2], &mut rng);
        let py = randn(&[1, 4, 2, 2], &mut rng);
        let got = run(&cmf, &store, &de, &py);

        let p = 4;
        // out_j = sum_i softmax_i(q_i . k_j) v_i
        let attend = |q: &[f64], k: &[f64], v: &[f64], c: usize, cv: usize| {
            let mut out = vec![0.0; cv * p];
            for j in 0..p {
                let s: Vec<f64> = (0..p).map(|i| (0..c).map(|d| q[d * p + i] * k[d * p + j]).sum()).collect();
                let z: f64 = s.iter().map(|v| v.exp()).sum();
                for ch in 0..cv {
                    out[ch * p + j] = (0..p).map(|i| s[i].exp() / z * v[ch * p + i]).sum();
                }
            }
            out
        };
        let self_attend = |sa: &SelfAttention, x: &[f64], c: usize, inner: usize| {
            let q = project(&store, &sa.q, x, c, p);
            let k = project(&store, &sa.k, x, c, p);
            let v = project(&store, &sa.v, x, c, p);
            let y = project(&store, &sa.o, &attend(&q, &k, &v, inner, inner), inner, p);
            let gamma = store.value(sa.gamma).data()[0];
            x.iter().zip(&y).map(|(a, b)| a + gamma * b).collect::<Vec<_>>()
        };
        let f_de = self_attend(&cmf.sa_de, de.data(), 3, 3);
        let f_py = self_attend(&cmf.sa_py, py.data(), 4, 2);
        let q = project(&store, &cmf.cross.q, &f_de, 3, p);
        let k = project(&store, &cmf.cross.k, &f_py, 4, p);
        let v = project(&store, &cmf.cross.v, &f_py, 4, p);
        let m = project(&store, &cmf.cross.m, &attend(&q, &k, &v, 3, 3), 3, p);
        let xi = store.value(cmf.cross.xi).data()[0];
        for (i, g) in got.iter().enumerate() {
            assert!((g - (xi * m[i] + f_py[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_deformation_collapses_to_uniform_closed_form() {
        // zero input and zero query bias give q = 0, so every column is uniform
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (store, cmf) = block(&mut rng);
        let de = Array::zeros(&[1, 3, 3, 3]);
        let py = randn(&[1, 4, 3, 3], &mut rng);
        let got = run(&cmf, &store, &de, &py);
        let g = Graph::<f64>::inference();
        let (enh, _) = cmf.sa_py.forward(&g, &store, g.input(py, false));
        let f_py = g.value(enh).data().to_vec();
        let v = project(&store, &cmf.cross.v, &f_py, 4, 9);
        let mean: Vec<f64> = (0..3).flat_map(|c| vec![v[c * 9..(c + 1) * 9].iter().sum::<f64>() / 9.0; 9]).collect();
        let m = project(&store, &cmf.cross.m, &mean, 3, 9);
        for (i, g) in got.iter().enumerate() {
            assert!((g - (m[i] + f_py[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn detector_only_ignores_deformation_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut store, cmf) = block(&mut rng);
        let py = randn(&[1, 4, 3, 3], &mut rng);
        let g = Graph::<f64>::inference();
        let (a, w) = cmf.forward_detector_only(&g, &store, g.input(py.clone(), false));
        assert!(w.de.is_none() && w.cross.is_none());
        let a = g.value(a).data().to_vec();
        set(&mut store, cmf.cross.xi, 5.0);
        set(&mut store, cmf.sa_de.gamma, 5.0);
        let (b, _) = cmf.forward_detector_only(&g, &store, g.input(py, false));
        assert_eq!(a, g.value(b).data().to_vec());
    }
}
