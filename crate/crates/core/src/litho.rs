// SPDX-License-Identifier: Apache-2.0

//! Proxy lithography simulator.
//!
//! The aerial image is the layout blurred by an isotropic Gaussian; the
//! resist is its threshold. The deformation map records, per pixel, the
//! displacement from the drawn contour to the printed contour.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::LayoutClip;
use crate::raster::{Bitmap, Field};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LithoParams {
    pub blur_sigma_px: f64,
    pub threshold: f64,
    /// Intensity added at convex layout corners before thresholding.
    pub corner_bias: f64,
    /// Search radius for contour correspondence.
    pub max_radius_px: usize,
}

impl Default for LithoParams {
    fn default() -> Self {
        Self { blur_sigma_px: 2.5, threshold: 0.5, corner_bias: 0.0, max_radius_px: 32 }
    }
}

/// Per-pixel displacement `(dx, dy)` and its norm, at simulator resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationMap {
    pub dx: Field,
    pub dy: Field,
    pub magnitude: Field,
    /// Layout-contour pixels with no printed contour within the search
    /// radius; their displacement is capped at `(max_radius, 0)`.
    pub capped: usize,
}

impl DeformationMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { dx: Field::new(height, width), dy: Field::new(height, width), magnitude: Field::new(height, width), capped: 0 }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dx.dims()
    }

    pub fn channels(&self) -> [&Field; 3] {
        [&self.dx, &self.dy, &self.magnitude]
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitude.mean()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LithoResult {
    pub resist: Bitmap,
    pub aerial: Field,
    pub deformation: DeformationMap,
}

/// Stateless simulator handle; cheap to clone and share.
#[derive(Clone, Debug, Default)]
pub struct Simulator {
    pub params: LithoParams,
}

impl Simulator {
    pub fn new(params: LithoParams) -> Result<Self> {
        if !(params.blur_sigma_px > 0.0) {
            return Err(Error::invalid("blur_sigma_px", "must be positive"));
        }
        if !(params.threshold > 0.0 && params.threshold < 1.0) {
            return Err(Error::invalid("threshold", "must lie in (0, 1)"));
        }
        if params.max_radius_px == 0 {
            return Err(Error::invalid("max_radius_px", "must be positive"));
        }
        Ok(Self { params })
    }

    pub fn simulate(&self, clip: &LayoutClip) -> Result<LithoResult> {
        simulate_raster(&clip.raster, &self.params)
    }
}

pub fn simulate(clip: &LayoutClip, params: &LithoParams) -> Result<LithoResult> {
    Simulator::new(params.clone())?.simulate(clip)
}

/// Same as [`simulate`] on a bare raster.
pub fn simulate_raster(layout: &Bitmap, params: &LithoParams) -> Result<LithoResult> {
    Simulator::new(params.clone())?;
    if !layout.is_binary() {
        return Err(Error::invalid("raster", "layout raster must be binary"));
    }
    let mut aerial = gaussian_blur(&layout.map(f64::from), params.blur_sigma_px);
    if params.corner_bias != 0.0 {
        for (y, x) in convex_corners(layout) {
            let v = aerial.get(y, x) + params.corner_bias;
            aerial.set(y, x, v.clamp(0.0, 1.0));
        }
    }
    let resist = aerial.map(|v| u8::from(v >= params.threshold));
    let deformation = deformation_map_capped(layout, &resist, params.max_radius_px)?;
    Ok(LithoResult { resist, aerial, deformation })
}

fn reflect(i: isize, n: usize) -> usize {
    // symmetric reflection: -1 -> 0, n -> n-1; period 2n
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with reflective borders.
pub fn gaussian_blur(img: &Field, sigma: f64) -> Field {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = img.dims();
    let mut tmp = Field::new(h, w);
    for y in 0..h {
        let row = img.row(y);
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * row[reflect(x as isize + t as isize - r, w)];
            }
            tmp.set(y, x, acc);
        }
    }
    let mut out = Field::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * tmp.get(reflect(y as isize + t as isize - r, h), x);
            }
            out.set(y, x, acc);
        }
    }
    out
}

/// Foreground pixels with background on two perpendicular 4-neighbours.
fn convex_corners(b: &Bitmap) -> Vec<(usize, usize)> {
    let bg = |y: isize, x: isize| b.get_signed(y, x).unwrap_or(0) == 0;
    let mut out = Vec::new();
    for y in 0..b.height() {
        for x in 0..b.width() {
            if b.get(y, x) == 0 {
                continue;
            }
            let (yi, xi) = (y as isize, x as isize);
            let vert = bg(yi - 1, xi) || bg(yi + 1, xi);
            let horiz = bg(yi, xi - 1) || bg(yi, xi + 1);
            if vert && horiz {
                out.push((y, x));
            }
        }
    }
    out
}

/// Deformation map with the default search radius.
pub fn deformation_map(layout: &Bitmap, resist: &Bitmap) -> Result<DeformationMap> {
    deformation_map_capped(layout, resist, LithoParams::default().max_radius_px)
}

/// Angle of `(dx, dy)` from the +x axis in `[0, 2pi)`.
fn angle(dx: isize, dy: isize) -> f64 {
    let a = (dy as f64).atan2(dx as f64);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

/// Nearest marked pixel to `(y, x)` within Chebyshev radius `max_r`, ties
/// broken by smallest angle. Returns `(dx, dy)`.
fn nearest(marks: &Bitmap, y: usize, x: usize, max_r: usize) -> Option<(isize, isize)> {
    let (yi, xi) = (y as isize, x as isize);
    let mut best: Option<(isize, f64, isize, isize)> = None; // (d2, angle, dx, dy)
    let consider = |dx: isize, dy: isize, best: &mut Option<(isize, f64, isize, isize)>| {
        if marks.get_signed(yi + dy, xi + dx) != Some(1) {
            return;
        }
        let d2 = dx * dx + dy * dy;
        let a = angle(dx, dy);
        if best.is_none_or(|(bd, ba, _, _)| d2 < bd || (d2 == bd && a < ba)) {
            *best = Some((d2, a, dx, dy));
        }
    };
    for r in 0..=max_r as isize {
        if r == 0 {
            consider(0, 0, &mut best);
        } else {
            for t in -r..=r {
                consider(t, -r, &mut best);
                consider(t, r, &mut best);
            }
            for t in -r + 1..r {
                consider(-r, t, &mut best);
                consider(r, t, &mut best);
            }
        }
        if let Some((d2, ..)) = best {
            if d2 < (r + 1) * (r + 1) {
                break;
            }
        }
    }
    best.filter(|b| b.0 <= (max_r * max_r) as isize).map(|b| (b.2, b.3))
}

fn contour_mask(b: &Bitmap) -> Bitmap {
    Bitmap::from_fn(b.height(), b.width(), |y, x| u8::from(b.is_contour(y, x)))
}

/// Displacement from each drawn contour pixel to the nearest printed contour
/// pixel, propagated to every other pixel from its nearest drawn contour
/// pixel.
pub fn deformation_map_capped(layout: &Bitmap, resist: &Bitmap, max_radius: usize) -> Result<DeformationMap> {
    if layout.dims() != resist.dims() {
        return Err(Error::Shape(format!("layout {:?} vs resist {:?}", layout.dims(), resist.dims())));
    }
    let (h, w) = layout.dims();
    let lc = contour_mask(layout);
    let rc = contour_mask(resist);
    let mut map = DeformationMap::zeros(h, w);
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            if lc.get(y, x) == 0 {
                continue;
            }
            any = true;
            let (dx, dy) = match nearest(&rc, y, x, max_radius) {
                Some((dx, dy)) => (dx as f64, dy as f64),
                None => {
                    map.capped += 1;
                    (max_radius as f64, 0.0)
                }
            };
            map.dx.set(y, x, dx);
            map.dy.set(y, x, dy);
        }
    }
    if !any {
        return Ok(map);
    }
    let owner = nearest_feature(&lc);
    for y in 0..h {
        for x in 0..w {
            let (oy, ox) = owner[y * w + x];
            let (dx, dy) = (map.dx.get(oy, ox), map.dy.get(oy, ox));
            map.dx.set(y, x, dx);
            map.dy.set(y, x, dy);
            map.magnitude.set(y, x, dx.hypot(dy));
        }
    }
    Ok(map)
}

/// Exact Euclidean feature transform: for every pixel, coordinates of the
/// nearest marked pixel. Separable lower-envelope-of-parabolas algorithm.
/// `marks` must have at least one marked pixel in every column it is
/// queried over; callers pass contour masks with at least one pixel.
fn nearest_feature(marks: &Bitmap) -> Vec<(usize, usize)> {
    let (h, w) = marks.dims();
    const INF: i64 = i64::MAX / 4;
    // column pass: nearest marked row in the same column
    let mut col_row = vec![usize::MAX; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if marks.get(y, x) != 0 {
                last = Some(y);
            }
            if let Some(l) = last {
                col_row[y * w + x] = l;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if marks.get(y, x) != 0 {
                next = Some(y);
            }
            if let Some(n) = next {
                let cur = col_row[y * w + x];
                if cur == usize::MAX || n - y < y - cur {
                    col_row[y * w + x] = n;
                }
            }
        }
    }
    // row pass: minimise (x - x')^2 + g(x')^2 over x'
    let mut out = vec![(0, 0); h * w];
    let mut v = vec![0usize; w];
    let mut z = vec![0f64; w + 1];
    for y in 0..h {
        let g = |x: usize| -> i64 {
            let r = col_row[y * w + x];
            if r == usize::MAX {
                INF
            } else {
                let d = r as i64 - y as i64;
                d * d
            }
        };
        let f: Vec<i64> = (0..w).map(g).collect();
        let sites: Vec<usize> = (0..w).filter(|&x| f[x] < INF).collect();
        // every column holds a mark somewhere, so every row has sites
        let mut k = 0usize;
        v[0] = sites[0];
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for &q in &sites[1..] {
            let s = |p: usize| ((f[q] + (q * q) as i64) - (f[p] + (p * p) as i64)) as f64 / (2.0 * (q as f64 - p as f64));
            while s(v[k]) <= z[k] {
                k -= 1;
            }
            let sk = s(v[k]);
            k += 1;
            v[k] = q;
            z[k] = sk;
            z[k + 1] = f64::INFINITY;
        }
        let mut k = 0usize;
        for x in 0..w {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            let p = v[k];
            out[y * w + x] = (col_row[y * w + p], p);
        }
    }
    out
}

/// Inverse nearest-neighbour warp: `out(p) = in(round(p - d(p)))`, background
/// outside the grid.
pub fn warp(raster: &Bitmap, map: &DeformationMap) -> Result<Bitmap> {
    if raster.dims() != map.dims() {
        return Err(Error::Shape(format!("raster {:?} vs map {:?}", raster.dims(), map.dims())));
    }
    let (h, w) = raster.dims();
    Ok(Bitmap::from_fn(h, w, |y, x| {
        let sx = (x as f64 - map.dx.get(y, x)).round();
        let sy = (y as f64 - map.dy.get(y, x)).round();
        if !sx.is_finite() || !sy.is_finite() {
            return 0;
        }
        raster.get_signed(sy as isize, sx as isize).unwrap_or(0)
    }))
}

/// Non-overlapping block mean of each channel down to `target_h x target_w`.
pub fn pool_deformation(map: &DeformationMap, target_h: usize, target_w: usize) -> Result<DeformationMap> {
    let (h, w) = map.dims();
    if target_h == 0 || target_w == 0 || h % target_h != 0 || w % target_w != 0 {
        return Err(Error::Shape(format!("cannot pool {h}x{w} to {target_h}x{target_w}")));
    }
    let (bh, bw) = (h / target_h, w / target_w);
    let n = (bh * bw) as f64;
    let pool = |f: &Field| {
        Field::from_fn(target_h, target_w, |ty, tx| {
            let mut s = 0.0;
            for y in ty * bh..(ty + 1) * bh {
                for x in tx * bw..(tx + 1) * bw {
                    s += f.get(y, x);
                }
            }
            s / n
        })
    };
    Ok(DeformationMap { dx: pool(&map.dx), dy: pool(&map.dy), magnitude: pool(&map.magnitude), capped: map.capped })
}
