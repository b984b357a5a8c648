// SPDX-License-Identifier: Apache-2.0

//! Spatial dot-product attention over flattened feature maps.
//!
//! For queries `q: [N,c,H,W]`, keys `k: [N,c,H,W]` and values
//! `v: [N,cv,H,W]`, with `i`, `j` ranging over the `H*W` positions:
//!
//! ```text
//! s[i][j]   = q_i . k_j
//! beta[j,i] = exp(s[i][j]) / sum_i' exp(s[i'][j])      (normalized per output j)
//! out_j     = sum_i beta[j,i] * v_i
//! ```

use std::rc::Rc;

use super::array::{matmul, Array, Float, Mat};
use super::graph::{Graph, Var};

/// Attention weights for one batch item, stored `[i][j]` (column `j` sums to one).
pub fn attention_weights<T: Float>(q: &[T], k: &[T], c: usize, hw: usize) -> Vec<T> {
    let mut s = vec![T::zero(); hw * hw];
    // s = q^T k : [hw_i, c] x [c, hw_j]
    matmul(Mat::new(q, c, hw).t(), Mat::new(k, c, hw), &mut s, T::zero());
    softmax_columns(&mut s, hw);
    s
}

fn softmax_columns<T: Float>(s: &mut [T], hw: usize) {
    let mut max = vec![T::neg_infinity(); hw];
    for row in s.chunks(hw) {
        for (m, &v) in max.iter_mut().zip(row) {
            if v > *m {
                *m = v;
            }
        }
    }
    let mut sum = vec![T::zero(); hw];
    for row in s.chunks_mut(hw) {
        for ((v, &m), acc) in row.iter_mut().zip(&max).zip(sum.iter_mut()) {
            *v = (*v - m).exp();
            *acc += *v;
        }
    }
    for row in s.chunks_mut(hw) {
        for (v, &z) in row.iter_mut().zip(&sum) {
            *v /= z;
        }
    }
}

impl<T: Float> Graph<T> {
    /// Dot-product attention (see module docs). Returns the attended values and
    /// the weights `[N, HW(i), HW(j)]`.
    pub fn attention(&self, q: Var, k: Var, v: Var) -> (Var, Rc<Array<T>>) {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, c, h, w) = vq.dims4();
        assert_eq!(vk.dims4(), (n, c, h, w), "attention: key shape");
        let (nv, cv, hv, wv) = vv.dims4();
        assert_eq!((nv, hv, wv), (n, h, w), "attention: value shape");
        let hw = h * w;
        let mut weights = Array::zeros(&[n, hw, hw]);
        let mut out = Array::zeros(&[n, cv, h, w]);
        for b in 0..n {
            let qb = &vq.data()[b * c * hw..(b + 1) * c * hw];
            let kb = &vk.data()[b * c * hw..(b + 1) * c * hw];
            let wb = attention_weights(qb, kb, c, hw);
            let vb = &vv.data()[b * cv * hw..(b + 1) * cv * hw];
            let ob = &mut out.data_mut()[b * cv * hw..(b + 1) * cv * hw];
            matmul(Mat::new(vb, cv, hw), Mat::new(&wb, hw, hw), ob, T::zero());
            weights.data_mut()[b * hw * hw..(b + 1) * hw * hw].copy_from_slice(&wb);
        }
        let weights = Rc::new(weights);
        let saved = Rc::clone(&weights);
        let var = self.push(out, &[q, k, v], move |g, needs| {
            let mut dq = needs[0].then(|| Array::zeros(&[n, c, h, w]));
            let mut dk = needs[1].then(|| Array::zeros(&[n, c, h, w]));
            let mut dv = needs[2].then(|| Array::zeros(&[n, cv, h, w]));
            let mut db = vec![T::zero(); hw * hw];
            for b in 0..n {
                let gb = &g.data()[b * cv * hw..(b + 1) * cv * hw];
                let wb = &saved.data()[b * hw * hw..(b + 1) * hw * hw];
                let vb = &vv.data()[b * cv * hw..(b + 1) * cv * hw];
                if let Some(dv) = dv.as_mut() {
                    // dV = dOut * W^T
                    let dst = &mut dv.data_mut()[b * cv * hw..(b + 1) * cv * hw];
                    matmul(Mat::new(gb, cv, hw), Mat::new(wb, hw, hw).t(), dst, T::zero());
                }
                if dq.is_none() && dk.is_none() {
                    continue;
                }
                // dW = V^T dOut : [hw_i, hw_j]
                matmul(Mat::new(vb, cv, hw).t(), Mat::new(gb, cv, hw), &mut db, T::zero());
                // softmax backward per column j
                let mut col_dot = vec![T::zero(); hw];
                for (wr, dr) in wb.chunks(hw).zip(db.chunks(hw)) {
                    for ((acc, &a), &d) in col_dot.iter_mut().zip(wr).zip(dr) {
                        *acc += a * d;
                    }
                }
                for (wr, dr) in wb.chunks(hw).zip(db.chunks_mut(hw)) {
                    for ((d, &a), &cd) in dr.iter_mut().zip(wr).zip(&col_dot) {
                        *d = a * (*d - cd);
                    }
                }
                // db now holds dS[i][j]
                let qb = &vq.data()[b * c * hw..(b + 1) * c * hw];
                let kb = &vk.data()[b * c * hw..(b + 1) * c * hw];
                if let Some(dq) = dq.as_mut() {
                    // dQ[:, i] = sum_j k_j dS[i][j]  ->  K * dS^T
                    let dst = &mut dq.data_mut()[b * c * hw..(b + 1) * c * hw];
                    matmul(Mat::new(kb, c, hw), Mat::new(&db, hw, hw).t(), dst, T::zero());
                }
                if let Some(dk) = dk.as_mut() {
                    // dK[:, j] = sum_i q_i dS[i][j]  ->  Q * dS
                    let dst = &mut dk.data_mut()[b * c * hw..(b + 1) * c * hw];
                    matmul(Mat::new(qb, c, hw), Mat::new(&db, hw, hw), dst, T::zero());
                }
            }
            vec![dq, dk, dv]
        });
        (var, weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_column_stochastic_and_positive() {
        let c = 4;
        let hw = 9;
        let q: Vec<f64> = (0..c * hw).map(|i| ((i * 7 % 13) as f64 - 6.0) * 0.3).collect();
        let k: Vec<f64> = (0..c * hw).map(|i| ((i * 5 % 11) as f64 - 5.0) * 0.4).collect();
        let w = attention_weights(&q, &k, c, hw);
        for j in 0..hw {
            let s: f64 = (0..hw).map(|i| w[i * hw + j]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(w.iter().all(|&v| v > 0.0));
    }
}
