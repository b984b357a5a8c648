// SPDX-License-Identifier: Apache-2.0

//! 2-D convolution lowered to matrix products (im2col / col2im).

use super::array::{matmul, Array, Float, Mat};
use super::graph::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Float>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let seg = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        seg.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Float> Graph<T> {
    /// Cross-correlation of `x: [N,C,H,W]` with `w: [O,C,kh,kw]`, zero padding.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let vx = self.value(x);
        let vw = self.value(w);
        let (n, c, h, wd) = vx.dims4();
        let (o, ci, kh, kw) = vw.dims4();
        assert_eq!(c, ci, "conv2d: input has {c} channels, kernel expects {ci}");
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d: kernel larger than padded input");
        let geo = Geometry {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        };
        let (k, p) = (geo.rows(), geo.cols());
        let in_plane = c * h * wd;
        let mut out = Array::zeros(&[n, o, geo.ho, geo.wo]);
        let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        for i in 0..n {
            let xi = &vx.data()[i * in_plane..(i + 1) * in_plane];
            let rhs = if geo.is_pointwise() {
                xi
            } else {
                im2col(xi, &geo, &mut cols);
                &cols[..]
            };
            let yi = &mut out.data_mut()[i * o * p..(i + 1) * o * p];
            matmul(Mat::new(vw.data(), o, k), Mat::new(rhs, k, p), yi, T::zero());
        }
        if let Some(b) = b {
            let vb = self.value(b);
            for (j, chunk) in out.data_mut().chunks_mut(p).enumerate() {
                let bb = vb.data()[j % o];
                chunk.iter_mut().for_each(|v| *v += bb);
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(out, &parents, move |g, needs| {
            let mut dx = needs[0].then(|| Array::zeros(&[n, c, h, wd]));
            let mut dw = needs[1].then(|| Array::zeros(&[o, c, kh, kw]));
            let mut cols = vec![T::zero(); if geo.is_pointwise() { 0 } else { k * p }];
            let mut dcols = vec![T::zero(); if geo.is_pointwise() { 0 } else { k * p }];
            for i in 0..n {
                let gi = &g.data()[i * o * p..(i + 1) * o * p];
                if let Some(dw) = dw.as_mut() {
                    let xi = &vx.data()[i * in_plane..(i + 1) * in_plane];
                    let rhs = if geo.is_pointwise() {
                        xi
                    } else {
                        im2col(xi, &geo, &mut cols);
                        &cols[..]
                    };
                    matmul(Mat::new(gi, o, p), Mat::new(rhs, k, p).t(), dw.data_mut(), T::one());
                }
                if let Some(dx) = dx.as_mut() {
                    let dxi = &mut dx.data_mut()[i * in_plane..(i + 1) * in_plane];
                    if geo.is_pointwise() {
                        matmul(Mat::new(vw.data(), o, k).t(), Mat::new(gi, o, p), dxi, T::zero());
                    } else {
                        matmul(Mat::new(vw.data(), o, k).t(), Mat::new(gi, o, p), &mut dcols, T::zero());
                        col2im(&dcols, &geo, dxi);
                    }
                }
            }
            let mut res = vec![dx, dw];
            if needs.len() == 3 {
                let mut db = Array::zeros(&[o]);
                for (j, chunk) in g.data().chunks(p).enumerate() {
                    db.data_mut()[j % o] += chunk.iter().copied().sum::<T>();
                }
                res.push(Some(db));
            }
            res
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Array<f64>, w: &Array<f64>, stride: usize, pad: usize) -> Array<f64> {
        let (n, c, h, wd) = x.dims4();
        let (o, _, kh, kw) = w.dims4();
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Array::zeros(&[n, o, ho, wo]);
        for b in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * c + ic) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out.data_mut()[((b * o + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0), (7, 2, 3)] {
            let x = Array::from_fn(&[2, 3, 9, 8], |i| ((i * 37 % 11) as f64) - 5.0);
            let w = Array::from_fn(&[4, 3, k, k], |i| ((i * 13 % 7) as f64) * 0.25 - 0.7);
            let g = Graph::<f64>::inference();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let y = g.conv2d(xv, wv, None, stride, pad);
            let want = naive_conv(&x, &w, stride, pad);
            let got = g.value(y);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-9, "k={k} s={stride} p={pad}: {a} vs {b}");
            }
        }
    }
}
