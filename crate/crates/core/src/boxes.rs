// SPDX-License-Identifier: Apache-2.0

//! Box geometry, anchors, delta coding and non-maximum suppression.
//!
//! Boxes are `[x1, y1, x2, y2]` in input-pixel coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::HotspotBox;

pub type Bbox = [f64; 4];

pub fn area(b: &Bbox) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &Bbox, b: &Bbox) -> f64 {
    let (aa, ab) = (area(a), area(b));
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    inter / (aa + ab - inter)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Base side per pyramid level P3, P4, P5.
    pub base_sizes: [f64; 3],
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self { scales: vec![0.25, 0.5, 1.0, 2.0], ratios: vec![0.5, 1.0, 2.0], base_sizes: [32.0, 64.0, 128.0] }
    }
}

impl AnchorConfig {
    pub fn per_location(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    /// `(w, h)` of each anchor shape at `base`, scale-major.
    pub fn shapes(&self, base: f64) -> Vec<(f64, f64)> {
        let mut v = Vec::with_capacity(self.per_location());
        for &s in &self.scales {
            for &r in &self.ratios {
                let side = s * base;
                v.push((side * r.sqrt(), side / r.sqrt()));
            }
        }
        v
    }
}

/// Anchors of one pyramid level, ordered `(y, x, a)`.
#[derive(Clone, Debug)]
pub struct LevelAnchors {
    pub level: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    pub per_location: usize,
    pub boxes: Vec<Bbox>,
}

#[derive(Clone, Debug)]
pub struct AnchorSet {
    pub levels: Vec<LevelAnchors>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.levels.iter().map(|l| l.boxes.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All anchors, level by level.
    pub fn all(&self) -> Vec<Bbox> {
        self.levels.iter().flat_map(|l| l.boxes.iter().copied()).collect()
    }
}

pub fn generate_anchors(input_h: usize, input_w: usize, cfg: &AnchorConfig) -> Result<AnchorSet> {
    if input_h == 0 || input_w == 0 || input_h % 32 != 0 || input_w % 32 != 0 {
        return Err(Error::Shape(format!("input {input_h}x{input_w} must be positive multiples of 32")));
    }
    let mut levels = Vec::new();
    for (i, level) in (3..=5).enumerate() {
        let stride = 1usize << level;
        let (h, w) = (input_h / stride, input_w / stride);
        let shapes = cfg.shapes(cfg.base_sizes[i]);
        let mut boxes = Vec::with_capacity(h * w * shapes.len());
        for y in 0..h {
            for x in 0..w {
                let (cx, cy) = ((x as f64 + 0.5) * stride as f64, (y as f64 + 0.5) * stride as f64);
                for &(aw, ah) in &shapes {
                    boxes.push([cx - aw / 2.0, cy - ah / 2.0, cx + aw / 2.0, cy + ah / 2.0]);
                }
            }
        }
        levels.push(LevelAnchors { level, stride, height: h, width: w, per_location: shapes.len(), boxes });
    }
    Ok(AnchorSet { levels })
}

/// Largest log-scale delta applied when decoding.
pub const DW_CLAMP: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// `(cx, cy, w, h)` of a box.
pub fn center_form(b: &Bbox) -> [f64; 4] {
    [(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0, b[2] - b[0], b[3] - b[1]]
}

/// Regression target of `gt` relative to `anchor`.
pub fn encode(anchor: &Bbox, gt: &Bbox) -> [f64; 4] {
    let a = center_form(anchor);
    let g = center_form(gt);
    [(g[0] - a[0]) / a[2], (g[1] - a[1]) / a[3], (g[2] / a[2]).ln(), (g[3] / a[3]).ln()]
}

/// Inverse of [`encode`], without clipping.
pub fn decode(anchor: &Bbox, d: &[f64; 4]) -> Bbox {
    let a = center_form(anchor);
    let cx = d[0] * a[2] + a[0];
    let cy = d[1] * a[3] + a[1];
    let w = d[2].min(DW_CLAMP).exp() * a[2];
    let h = d[3].min(DW_CLAMP).exp() * a[3];
    [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
}

/// Decodes and clips to `[0, w] x [0, h]`; rejects non-finite deltas.
pub fn decode_clipped(anchor: &Bbox, d: &[f64; 4], img_h: usize, img_w: usize) -> Result<Bbox> {
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("deltas", format!("non-finite regression output {d:?}")));
    }
    let b = decode(anchor, d);
    let (w, h) = (img_w as f64, img_h as f64);
    Ok([b[0].clamp(0.0, w), b[1].clamp(0.0, h), b[2].clamp(0.0, w), b[3].clamp(0.0, h)])
}

/// Scored box with the pyramid level it came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: HotspotBox,
    pub level: usize,
}

/// Descending score, ties by box coordinates then class.
pub fn score_order(a: &HotspotBox, b: &HotspotBox) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.x1.total_cmp(&b.x1))
        .then(a.y1.total_cmp(&b.y1))
        .then(a.x2.total_cmp(&b.x2))
        .then(a.y2.total_cmp(&b.y2))
        .then(a.class_id.cmp(&b.class_id))
}

/// Greedy per-class suppression: drop scores below `score_floor`, then keep
/// each detection whose IoU with every kept same-class detection is at most
/// `iou_threshold`. Output is sorted by descending score.
pub fn nms(dets: &[Detection], iou_threshold: f64, score_floor: f64) -> Vec<Detection> {
    let mut cand: Vec<Detection> = dets.iter().filter(|d| d.bbox.score >= score_floor).copied().collect();
    cand.sort_by(|a, b| score_order(&a.bbox, &b.bbox));
    let mut kept: Vec<Detection> = Vec::new();
    for d in cand {
        let c = d.bbox.coords();
        if kept.iter().all(|k| k.bbox.class_id != d.bbox.class_id || iou(&k.bbox.coords(), &c) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_fixture() {
        assert!((iou(&[0.0, 0.0, 2.0, 2.0], &[1.0, 1.0, 3.0, 3.0]) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou(&[0.0, 0.0, 1.0, 1.0], &[2.0, 2.0, 3.0, 3.0]), 0.0);
        assert_eq!(iou(&[0.0, 0.0, 0.0, 1.0], &[0.0, 0.0, 0.0, 1.0]), 0.0);
    }

    #[test]
    fn anchor_counts_and_shapes() {
        let a = generate_anchors(512, 512, &AnchorConfig::default()).unwrap();
        assert_eq!(a.levels[0].boxes.len(), 64 * 64 * 12);
        // scale 1, ratio 1 at P4 is the base square
        let shapes = AnchorConfig::default().shapes(64.0);
        assert_eq!(shapes[2 * 3 + 1], (64.0, 64.0));
        let (w, h) = AnchorConfig::default().shapes(32.0)[2 * 3 + 2];
        assert!((w * h - 1024.0).abs() < 1e-9 && (w / h - 2.0).abs() < 1e-12);
        assert!((w - 45.254834).abs() < 1e-5 && (h - 22.627417).abs() < 1e-5);
        // centres on the stride grid
        let b = a.levels[1].boxes[12 * 3 + 5];
        assert_eq!(((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0), (56.0, 8.0));
        assert!(generate_anchors(500, 512, &AnchorConfig::default()).is_err());
    }

    #[test]
    fn coder_identity_and_scale() {
        let anchor = [10.0, 20.0, 42.0, 36.0];
        assert_eq!(decode(&anchor, &[0.0; 4]), anchor);
        let b = decode(&anchor, &[0.0, 0.0, 2f64.ln(), 0.0]);
        assert!((b[2] - b[0] - 64.0).abs() < 1e-12);
        let gt = [5.0, 7.5, 60.0, 31.0];
        let r = decode(&anchor, &encode(&anchor, &gt));
        assert!(r.iter().zip(&gt).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(decode_clipped(&anchor, &[f64::NAN, 0.0, 0.0, 0.0], 64, 64).is_err());
    }

    fn det(x: f64, score: f64, class_id: u32) -> Detection {
        Detection { bbox: HotspotBox { x1: x, y1: 0.0, x2: x + 10.0, y2: 10.0, class_id, score }, level: 3 }
    }

    #[test]
    fn nms_basics() {
        let kept = nms(&[det(0.0, 0.8, 0), det(0.0, 0.9, 0)], 0.5, 0.05);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].bbox.score, 0.9);
        assert_eq!(nms(&[det(0.0, 0.8, 0), det(20.0, 0.9, 0), det(0.0, 0.7, 1)], 0.5, 0.05).len(), 3);
        assert!(nms(&[det(0.0, 0.01, 0)], 0.5, 0.05).is_empty());
    }
}
