// SPDX-License-Identifier: Apache-2.0

//! Elementwise, pooling and dense ops.

use super::array::{matmul, Array, Float, Mat};
use super::graph::{Graph, Var};

impl<T: Float> Graph<T> {
    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let mut out = (*va).clone();
        out.add_assign(&vb);
        self.push(out, &[a, b], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn relu(&self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let mask: Vec<bool> = out.data().iter().map(|&v| v > T::zero()).collect();
        self.push(out, &[x], move |g, _| {
            let mut dx = g.clone();
            for (d, &m) in dx.data_mut().iter_mut().zip(&mask) {
                if !m {
                    *d = T::zero();
                }
            }
            vec![Some(dx)]
        })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let saved = out.clone();
        self.push(out, &[x], move |g, _| {
            let mut dx = g.clone();
            for (d, &s) in dx.data_mut().iter_mut().zip(saved.data()) {
                *d *= s * (T::one() - s);
            }
            vec![Some(dx)]
        })
    }

    /// `s * x` for a one-element parameter `s`.
    pub fn scale_by(&self, x: Var, s: Var) -> Var {
        let vx = self.value(x);
        let vs = self.value(s);
        assert_eq!(vs.len(), 1, "scale_by expects a scalar");
        let k = vs.data()[0];
        let out = vx.map(|v| v * k);
        self.push(out, &[x, s], move |g, needs| {
            let dx = needs[0].then(|| g.map(|v| v * k));
            let ds = needs[1].then(|| {
                let dot: T = g.data().iter().zip(vx.data()).map(|(&a, &b)| a * b).sum();
                Array::scalar(dot)
            });
            vec![dx, ds]
        })
    }

    /// Multiplies every channel of `x` (`[N,C,H,W]`) by `gate` (`[N,C]`).
    pub fn scale_channels(&self, x: Var, gate: Var) -> Var {
        let vx = self.value(x);
        let vg = self.value(gate);
        let (n, c, h, w) = vx.dims4();
        assert_eq!(vg.shape(), &[n, c], "scale_channels: gate shape");
        let hw = h * w;
        let mut out = (*vx).clone();
        for (i, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            let k = vg.data()[i];
            chunk.iter_mut().for_each(|v| *v *= k);
        }
        self.push(out, &[x, gate], move |g, needs| {
            let dx = needs[0].then(|| {
                let mut dx = g.clone();
                for (i, chunk) in dx.data_mut().chunks_mut(hw).enumerate() {
                    let k = vg.data()[i];
                    chunk.iter_mut().for_each(|v| *v *= k);
                }
                dx
            });
            let dg = needs[1].then(|| {
                let data = g
                    .data()
                    .chunks(hw)
                    .zip(vx.data().chunks(hw))
                    .map(|(a, b)| a.iter().zip(b).map(|(&p, &q)| p * q).sum())
                    .collect();
                Array::from_vec(&[n, c], data)
            });
            vec![dx, dg]
        })
    }

    /// `[N,Cin] x W^T + b` with `W: [Cout,Cin]`, `b: [Cout]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let vx = self.value(x);
        let vw = self.value(w);
        let (n, cin) = (vx.shape()[0], vx.shape()[1]);
        let cout = vw.shape()[0];
        assert_eq!(vw.shape(), &[cout, cin], "linear: weight shape");
        let mut out = Array::zeros(&[n, cout]);
        matmul(Mat::new(vx.data(), n, cin), Mat::new(vw.data(), cout, cin).t(), out.data_mut(), T::zero());
        if let Some(b) = b {
            let vb = self.value(b);
            for row in out.data_mut().chunks_mut(cout) {
                for (o, &bb) in row.iter_mut().zip(vb.data()) {
                    *o += bb;
                }
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(out, &parents, move |g, needs| {
            let dx = needs[0].then(|| {
                let mut dx = Array::zeros(&[n, cin]);
                matmul(Mat::new(g.data(), n, cout), Mat::new(vw.data(), cout, cin), dx.data_mut(), T::zero());
                dx
            });
            let dw = needs[1].then(|| {
                let mut dw = Array::zeros(&[cout, cin]);
                matmul(Mat::new(g.data(), n, cout).t(), Mat::new(vx.data(), n, cin), dw.data_mut(), T::zero());
                dw
            });
            let mut res = vec![dx, dw];
            if needs.len() == 3 {
                let mut db = Array::zeros(&[cout]);
                for row in g.data().chunks(cout) {
                    for (d, &v) in db.data_mut().iter_mut().zip(row) {
                        *d += v;
                    }
                }
                res.push(Some(db));
            }
            res
        })
    }

    /// Mean over the spatial axes: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&self, x: Var) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = vx.dims4();
        let hw = h * w;
        let inv = T::of(1.0 / hw as f64);
        let data = vx.data().chunks(hw).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        self.push(Array::from_vec(&[n, c], data), &[x], move |g, _| {
            let mut dx = Array::zeros(&[n, c, h, w]);
            for (chunk, &gv) in dx.data_mut().chunks_mut(hw).zip(g.data()) {
                chunk.iter_mut().for_each(|v| *v = gv * inv);
            }
            vec![Some(dx)]
        })
    }

    /// Max over the spatial axes: `[N,C,H,W] -> [N,C]`. Ties go to the first index.
    pub fn global_max_pool(&self, x: Var) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = vx.dims4();
        let hw = h * w;
        let mut arg = Vec::with_capacity(n * c);
        let mut data = Vec::with_capacity(n * c);
        for ch in vx.data().chunks(hw) {
            let mut best = 0;
            for (i, &v) in ch.iter().enumerate() {
                if v > ch[best] {
                    best = i;
                }
            }
            arg.push(best);
            data.push(ch[best]);
        }
        self.push(Array::from_vec(&[n, c], data), &[x], move |g, _| {
            let mut dx = Array::zeros(&[n, c, h, w]);
            for (i, &a) in arg.iter().enumerate() {
                dx.data_mut()[i * hw + a] = g.data()[i];
            }
            vec![Some(dx)]
        })
    }

    /// Max pooling over a square window; padded positions never win.
    pub fn max_pool2d(&self, x: Var, k: usize, stride: usize, pad: usize) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = vx.dims4();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let mut out = Array::zeros(&[n, c, ho, wo]);
        let mut arg = vec![0usize; n * c * ho * wo];
        for plane in 0..n * c {
            let src = &vx.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best_i = usize::MAX;
                    let mut best = T::neg_infinity();
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if src[idx] > best || best_i == usize::MAX {
                                best = src[idx];
                                best_i = idx;
                            }
                        }
                    }
                    let o = plane * ho * wo + oy * wo + ox;
                    out.data_mut()[o] = best;
                    arg[o] = plane * h * w + best_i;
                }
            }
        }
        self.push(out, &[x], move |g, _| {
            let mut dx = Array::zeros(&[n, c, h, w]);
            for (o, &a) in arg.iter().enumerate() {
                dx.data_mut()[a] += g.data()[o];
            }
            vec![Some(dx)]
        })
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2x(&self, x: Var) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = vx.dims4();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = Array::zeros(&[n, c, h2, w2]);
        for plane in 0..n * c {
            let src = &vx.data()[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out.data_mut()[plane * h2 * w2..(plane + 1) * h2 * w2];
            for y in 0..h2 {
                for x in 0..w2 {
                    dst[y * w2 + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
        self.push(out, &[x], move |g, _| {
            let mut dx = Array::zeros(&[n, c, h, w]);
            for plane in 0..n * c {
                let src = &g.data()[plane * h2 * w2..(plane + 1) * h2 * w2];
                let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
                for y in 0..h2 {
                    for x in 0..w2 {
                        dst[(y / 2) * w + x / 2] += src[y * w2 + x];
                    }
                }
            }
            vec![Some(dx)]
        })
    }
}

#[inline]
pub fn sigmoid<T: Float>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
