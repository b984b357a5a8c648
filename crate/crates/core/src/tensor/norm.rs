// SPDX-License-Identifier: Apache-2.0

use super::array::{Array, Float};
use super::graph::{Graph, Var};

impl<T: Float> Graph<T> {
    /// Group normalization with per-channel affine `gamma`, `beta` (`[C]`).
    pub fn group_norm(&self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Var {
        let vx = self.value(x);
        let vg = self.value(gamma);
        let vb = self.value(beta);
        let (n, c, h, w) = vx.dims4();
        assert!(groups > 0 && c % groups == 0, "group_norm: {c} channels not divisible by {groups}");
        let cpg = c / groups;
        let hw = h * w;
        let gsize = cpg * hw;
        let mut xhat = Array::zeros(&[n, c, h, w]);
        let mut inv_std = vec![T::zero(); n * groups];
        for (gi, (src, dst)) in vx.data().chunks(gsize).zip(xhat.data_mut().chunks_mut(gsize)).enumerate() {
            let mean = src.iter().map(|v| v.f64()).sum::<f64>() / gsize as f64;
            let var = src.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / gsize as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[gi] = T::of(is);
            let (m, s) = (T::of(mean), T::of(is));
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - m) * s;
            }
        }
        let mut out = xhat.clone();
        for (j, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            let ch = j % c;
            let (gm, bt) = (vg.data()[ch], vb.data()[ch]);
            chunk.iter_mut().for_each(|v| *v = *v * gm + bt);
        }
        self.push(out, &[x, gamma, beta], move |g, needs| {
            let mut dgamma = Array::zeros(&[c]);
            let mut dbeta = Array::zeros(&[c]);
            for (j, (gc, xc)) in g.data().chunks(hw).zip(xhat.data().chunks(hw)).enumerate() {
                let ch = j % c;
                dgamma.data_mut()[ch] += gc.iter().zip(xc).map(|(&a, &b)| a * b).sum::<T>();
                dbeta.data_mut()[ch] += gc.iter().copied().sum::<T>();
            }
            let dx = needs[0].then(|| {
                let mut dx = Array::zeros(&[n, c, h, w]);
                let inv_n = T::of(1.0 / gsize as f64);
                for gi in 0..n * groups {
                    let range = gi * gsize..(gi + 1) * gsize;
                    let gg = &g.data()[range.clone()];
                    let xh = &xhat.data()[range.clone()];
                    let first_ch = (gi % groups) * cpg;
                    // dxhat = g * gamma
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for (idx, (&gv, &xv)) in gg.iter().zip(xh).enumerate() {
                        let d = gv * vg.data()[first_ch + idx / hw];
                        sum_d += d;
                        sum_dx += d * xv;
                    }
                    let (mean_d, mean_dx) = (sum_d * inv_n, sum_dx * inv_n);
                    let s = inv_std[gi];
                    let dst = &mut dx.data_mut()[range];
                    for (idx, ((o, &gv), &xv)) in dst.iter_mut().zip(gg).zip(xh).enumerate() {
                        let d = gv * vg.data()[first_ch + idx / hw];
                        *o = s * (d - mean_d - xv * mean_dx);
                    }
                }
                dx
            });
            vec![dx, Some(dgamma), Some(dbeta)]
        })
    }
}
