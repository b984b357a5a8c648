// SPDX-License-Identifier: Apache-2.0

//! Synthetic Manhattan layouts, clipping, and geometric hotspot labels.

mod clip;
mod generate;
mod oracle;

pub use clip::{clip_dataset, ClipMode};
pub use generate::{generate_layout, GenSpec};
pub use oracle::{hotspot_oracle, find_violations, OracleRules, Violation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Bitmap;

/// Hotspot category ids.
pub const NECKING: u32 = 0;
pub const BRIDGING: u32 = 1;

pub fn class_name(class_id: u32) -> &'static str {
    match class_id {
        NECKING => "necking",
        BRIDGING => "bridging",
        _ => "other",
    }
}

/// Axis-aligned rectilinear polygon in pixel-edge coordinates.
///
/// A pixel `(y, x)` is inside when its centre `(x + 0.5, y + 0.5)` is
/// inside under the even-odd rule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<(i64, i64)>,
}

impl Polygon {
    /// Rectangle `[x0, x1) x [y0, y1)`.
    pub fn rect(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { vertices: vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)] }
    }

    /// `(x0, y0, x1, y1)` bounding box.
    pub fn bounds(&self) -> (i64, i64, i64, i64) {
        let xs = self.vertices.iter().map(|v| v.0);
        let ys = self.vertices.iter().map(|v| v.1);
        (
            xs.clone().min().unwrap_or(0),
            ys.clone().min().unwrap_or(0),
            xs.max().unwrap_or(0),
            ys.max().unwrap_or(0),
        )
    }

    pub fn as_rect(&self) -> Option<(i64, i64, i64, i64)> {
        if self.vertices.len() != 4 {
            return None;
        }
        let b = self.bounds();
        let corners = [(b.0, b.1), (b.2, b.1), (b.2, b.3), (b.0, b.3)];
        corners.iter().all(|c| self.vertices.contains(c)).then_some(b)
    }

    /// Every edge is horizontal or vertical.
    pub fn is_rectilinear(&self) -> bool {
        let n = self.vertices.len();
        n >= 4
            && (0..n).all(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                (a.0 == b.0) != (a.1 == b.1)
            })
    }

    /// Intersection with the window `[x0, x0+w) x [y0, y0+h)`, translated to
    /// window coordinates. Only rectangles are supported.
    pub fn clip_to(&self, x0: i64, y0: i64, w: i64, h: i64) -> Option<Polygon> {
        let (a, b, c, d) = self.as_rect().expect("clip_to expects a rectangle");
        let (nx0, ny0) = (a.max(x0), b.max(y0));
        let (nx1, ny1) = (c.min(x0 + w), d.min(y0 + h));
        (nx0 < nx1 && ny0 < ny1).then(|| Polygon::rect(nx0 - x0, ny0 - y0, nx1 - x0, ny1 - y0))
    }
}

/// Union raster of `polygons` on an `h x w` grid.
pub fn rasterize(polygons: &[Polygon], height: usize, width: usize) -> Bitmap {
    let mut out = Bitmap::new(height, width);
    let mut crossings: Vec<i64> = Vec::new();
    for poly in polygons {
        let (_, py0, _, py1) = poly.bounds();
        let n = poly.vertices.len();
        for y in py0.max(0)..py1.min(height as i64) {
            // scanline through pixel centres at y + 0.5 crosses only vertical edges
            crossings.clear();
            for i in 0..n {
                let (a, b) = (poly.vertices[i], poly.vertices[(i + 1) % n]);
                if a.0 == b.0 {
                    let (lo, hi) = (a.1.min(b.1), a.1.max(b.1));
                    if lo <= y && y < hi {
                        crossings.push(a.0);
                    }
                }
            }
            crossings.sort_unstable();
            for pair in crossings.chunks_exact(2) {
                let (x0, x1) = (pair[0].max(0), pair[1].min(width as i64));
                for x in x0..x1 {
                    out.set(y as usize, x as usize, 1);
                }
            }
        }
    }
    out
}

/// Binary raster of a layout window together with its polygon source.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutClip {
    pub id: String,
    pub raster: Bitmap,
    pub pitch_nm: f64,
    pub polygons: Vec<Polygon>,
}

impl LayoutClip {
    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    /// Checks binary values, positive dims divisible by 32, and that the
    /// polygons reproduce the raster.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.raster.dims();
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!("clip {} is {h}x{w}; dims must be positive multiples of 32", self.id)));
        }
        if !self.raster.is_binary() {
            return Err(Error::invalid("raster", "values must be 0 or 1"));
        }
        if rasterize(&self.polygons, h, w) != self.raster {
            return Err(Error::invalid("polygons", format!("clip {}: polygons do not reproduce raster", self.id)));
        }
        Ok(())
    }
}

/// Axis-aligned box in pixel coordinates (`x1,y1` inclusive, `x2,y2` exclusive).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotspotBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class_id: u32,
    pub score: f64,
}

impl HotspotBox {
    pub fn ground_truth(x1: f64, y1: f64, x2: f64, y2: f64, class_id: u32) -> Self {
        Self { x1, y1, x2, y2, class_id, score: 1.0 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Positive extent and inside `[0,w] x [0,h]`.
    pub fn is_valid_in(&self, h: usize, w: usize) -> bool {
        self.x1 < self.x2
            && self.y1 < self.y2
            && self.x1 >= 0.0
            && self.y1 >= 0.0
            && self.x2 <= w as f64
            && self.y2 <= h as f64
            && self.coords().iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { x1: self.x1 * s, y1: self.y1 * s, x2: self.x2 * s, y2: self.y2 * s, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_rasterizes_half_open() {
        let b = rasterize(&[Polygon::rect(1, 2, 4, 3)], 5, 6);
        assert_eq!(b.count_ones(), 3);
        assert_eq!(b.get(2, 1), 1);
        assert_eq!(b.get(2, 3), 1);
        assert_eq!(b.get(2, 4), 0);
    }

    #[test]
    fn l_shaped_polygon_rasterizes_by_even_odd() {
        let l = Polygon { vertices: vec![(0, 0), (4, 0), (4, 1), (1, 1), (1, 4), (0, 4)] };
        assert!(l.is_rectilinear());
        let b = rasterize(&[l], 4, 4);
        assert_eq!(b.count_ones(), 4 + 3);
    }

    #[test]
    fn clip_to_window() {
        let p = Polygon::rect(10, 10, 50, 20);
        assert_eq!(p.clip_to(32, 0, 32, 32), Some(Polygon::rect(0, 10, 18, 20)));
        assert_eq!(p.clip_to(64, 0, 32, 32), None);
    }
}
