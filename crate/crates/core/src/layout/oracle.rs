// SPDX-License-Identifier: Apache-2.0

//! Geometric hotspot labelling from a layout and its printed (resist) image.
//!
//! Cross-sections are measured on straight stretches of the drawn layout: a
//! run of equal pixels along one axis, bounded on both sides by the opposite
//! value, whose neighbouring lines within one run-length repeat the same run.
//! Line ends, corners and vias therefore never produce cross-sections.
//!
//! * necking: drawn wire width `>= neck_width_px`, printed pixels of the
//!   same cross-section `< neck_width_px`.
//! * bridging: drawn gap `>= bridge_gap_px`, printed open pixels of the
//!   same cross-section `< bridge_gap_px`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{HotspotBox, LayoutClip, BRIDGING, NECKING};
use crate::raster::Bitmap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleRules {
    pub neck_width_px: usize,
    pub bridge_gap_px: usize,
    pub box_size_px: usize,
}

impl Default for OracleRules {
    fn default() -> Self {
        Self { neck_width_px: 4, bridge_gap_px: 3, box_size_px: 69 }
    }
}

/// One offending cross-section, located at its midpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violation {
    pub class_id: u32,
    pub x: f64,
    pub y: f64,
    pub drawn: usize,
    pub printed: usize,
}

#[derive(Clone, Copy)]
enum Axis {
    /// Runs along y inside one column.
    Vertical,
    /// Runs along x inside one row.
    Horizontal,
}

struct View<'a> {
    img: &'a Bitmap,
    axis: Axis,
}

impl View<'_> {
    /// (number of lines, length of each line)
    fn extent(&self) -> (usize, usize) {
        match self.axis {
            Axis::Vertical => (self.img.width(), self.img.height()),
            Axis::Horizontal => (self.img.height(), self.img.width()),
        }
    }

    #[inline]
    fn at(&self, line: usize, pos: usize) -> u8 {
        match self.axis {
            Axis::Vertical => self.img.get(pos, line),
            Axis::Horizontal => self.img.get(line, pos),
        }
    }
}

/// Bounded runs of `value` in one line: `[start, end]` inclusive, with the
/// opposite value on both sides (runs touching the border are skipped).
fn bounded_runs(layout: &View<'_>, line: usize, value: u8) -> Vec<(usize, usize)> {
    let (_, len) = layout.extent();
    let mut runs = Vec::new();
    let mut pos = 0;
    while pos < len {
        if layout.at(line, pos) != value {
            pos += 1;
            continue;
        }
        let start = pos;
        while pos < len && layout.at(line, pos) == value {
            pos += 1;
        }
        let end = pos - 1;
        if start > 0 && pos < len {
            runs.push((start, end));
        }
    }
    runs
}

fn straight(layout: &View<'_>, line: usize, run: (usize, usize), value: u8) -> bool {
    let (lines, _) = layout.extent();
    let k = run.1 - run.0 + 1;
    if line < k || line + k >= lines {
        return false;
    }
    (line - k..=line + k).all(|l| {
        layout.at(l, run.0 - 1) != value
            && layout.at(l, run.1 + 1) != value
            && (run.0..=run.1).all(|p| layout.at(l, p) == value)
    })
}

fn scan(layout: &Bitmap, resist: &Bitmap, rules: &OracleRules, out: &mut Vec<Violation>) {
    for axis in [Axis::Vertical, Axis::Horizontal] {
        let lv = View { img: layout, axis };
        let rv = View { img: resist, axis };
        let (lines, _) = lv.extent();
        for line in 0..lines {
            for (value, class_id, limit) in
                [(1u8, NECKING, rules.neck_width_px), (0u8, BRIDGING, rules.bridge_gap_px)]
            {
                for run in bounded_runs(&lv, line, value) {
                    let drawn = run.1 - run.0 + 1;
                    if drawn < limit || !straight(&lv, line, run, value) {
                        continue;
                    }
                    let printed = (run.0..=run.1).filter(|&p| rv.at(line, p) == value).count();
                    if printed >= limit {
                        continue;
                    }
                    let along = (run.0 + run.1 + 1) as f64 / 2.0;
                    let across = line as f64 + 0.5;
                    let (x, y) = match axis {
                        Axis::Vertical => (across, along),
                        Axis::Horizontal => (along, across),
                    };
                    out.push(Violation { class_id, x, y, drawn, printed });
                }
            }
        }
    }
}

/// Every offending cross-section, sorted by (class, y, x).
pub fn find_violations(layout: &Bitmap, resist: &Bitmap, rules: &OracleRules) -> Vec<Violation> {
    assert_eq!(layout.dims(), resist.dims(), "resist must match layout shape");
    let mut v = Vec::new();
    scan(layout, resist, rules, &mut v);
    v.sort_by(|a, b| {
        a.class_id
            .cmp(&b.class_id)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    v
}

/// Labels hotspots with `box_size_px` squares.
///
/// Same-class violations closer than `box_size_px / 2` (Chebyshev) are
/// linked into clusters. A cluster longer than the box along an axis is cut
/// into `round(extent / box_size_px)` equal slabs on that axis. Each non-empty
/// piece gets one box centred on its mean, shifted to lie inside the clip.
pub fn hotspot_oracle(clip: &LayoutClip, resist: &Bitmap, rules: &OracleRules) -> Vec<HotspotBox> {
    let violations = find_violations(&clip.raster, resist, rules);
    let size = rules.box_size_px as f64;
    let (h, w) = clip.raster.dims();
    let mut boxes = Vec::new();
    for class_id in [NECKING, BRIDGING] {
        let pts: Vec<(f64, f64)> =
            violations.iter().filter(|v| v.class_id == class_id).map(|v| (v.x, v.y)).collect();
        for cluster in link(&pts, size / 2.0) {
            for (cx, cy) in split_means(&cluster, size) {
                let x1 = (cx - size / 2.0).round().clamp(0.0, (w as f64 - size).max(0.0));
                let y1 = (cy - size / 2.0).round().clamp(0.0, (h as f64 - size).max(0.0));
                boxes.push(HotspotBox::ground_truth(
                    x1,
                    y1,
                    (x1 + size).min(w as f64),
                    (y1 + size).min(h as f64),
                    class_id,
                ));
            }
        }
    }
    boxes
}

/// Single-linkage clusters under Chebyshev distance `<= radius`, in order of
/// first member.
fn link(pts: &[(f64, f64)], radius: f64) -> Vec<Vec<(f64, f64)>> {
    let mut parent: Vec<usize> = (0..pts.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let cell = radius.max(1.0);
    let key = |(x, y): (f64, f64)| ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in pts.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    for (i, &p) in pts.iter().enumerate() {
        let (kx, ky) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(b) = buckets.get(&(kx + dx, ky + dy)) else { continue };
                for &j in b {
                    if j > i && (pts[j].0 - p.0).abs() <= radius && (pts[j].1 - p.1).abs() <= radius {
                        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                        if ri != rj {
                            parent[ri.max(rj)] = ri.min(rj);
                        }
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = Vec::new();
    let mut groups: HashMap<usize, Vec<(f64, f64)>> = HashMap::new();
    for (i, &p) in pts.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_insert_with(|| {
            order.push(r);
            Vec::new()
        });
        groups.get_mut(&r).unwrap().push(p);
    }
    order.into_iter().map(|r| groups.remove(&r).unwrap()).collect()
}

fn split_means(cluster: &[(f64, f64)], size: f64) -> Vec<(f64, f64)> {
    let lo = |f: fn(&(f64, f64)) -> f64| cluster.iter().map(f).fold(f64::INFINITY, f64::min);
    let hi = |f: fn(&(f64, f64)) -> f64| cluster.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1, y0, y1) = (lo(|p| p.0), hi(|p| p.0), lo(|p| p.1), hi(|p| p.1));
    let nx = ((x1 - x0) / size).round().max(1.0) as usize;
    let ny = ((y1 - y0) / size).round().max(1.0) as usize;
    let slot = |v: f64, lo: f64, hi: f64, n: usize| {
        if n == 1 { 0 } else { (((v - lo) / (hi - lo) * n as f64) as usize).min(n - 1) }
    };
    let mut acc = vec![(0.0, 0.0, 0usize); nx * ny];
    for &(x, y) in cluster {
        let a = &mut acc[slot(y, y0, y1, ny) * nx + slot(x, x0, x1, nx)];
        a.0 += x;
        a.1 += y;
        a.2 += 1;
    }
    acc.into_iter().filter(|a| a.2 > 0).map(|(sx, sy, n)| (sx / n as f64, sy / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{rasterize, Polygon};

    fn clip_from(polys: Vec<Polygon>, n: usize) -> LayoutClip {
        LayoutClip { id: "t".into(), raster: rasterize(&polys, n, n), pitch_nm: 1.0, polygons: polys }
    }

    /// Independent oracle: at every column, measure the printed gap between
    /// the two wires by direct scanning.
    fn min_printed_gap(resist: &Bitmap, x: usize, y_lo: usize, y_hi: usize) -> usize {
        (y_lo..y_hi).filter(|&y| resist.get(y, x) == 0).count()
    }

    #[test]
    fn identical_resist_has_no_violations() {
        let clip = clip_from(vec![Polygon::rect(10, 20, 120, 30), Polygon::rect(10, 40, 120, 52)], 128);
        assert!(hotspot_oracle(&clip, &clip.raster, &OracleRules::default()).is_empty());
    }

    #[test]
    fn bridging_between_parallel_wires() {
        // wires y in [40,50) and [56,66): layout gap 6 px
        let clip = clip_from(vec![Polygon::rect(20, 40, 108, 50), Polygon::rect(20, 56, 108, 66)], 128);
        let mut resist = clip.raster.clone();
        for x in 20..108 {
            for y in 50..55 {
                resist.set(y, x, 1); // printed gap 1 px at y = 55
            }
        }
        for x in 30..98 {
            assert_eq!(min_printed_gap(&resist, x, 50, 56), 1);
        }
        let rules = OracleRules { neck_width_px: 4, bridge_gap_px: 3, box_size_px: 69 };
        let boxes = hotspot_oracle(&clip, &resist, &rules);
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        assert_eq!(b.class_id, BRIDGING);
        let (cx, cy) = b.center();
        assert!((cx - 64.0).abs() <= 0.5, "cx {cx}");
        assert!((cy - 53.0).abs() <= 0.5, "cy {cy}");
        assert!(b.is_valid_in(128, 128));
    }

    #[test]
    fn necking_at_pinch() {
        // horizontal wire, width 8, y in [60,68)
        let clip = clip_from(vec![Polygon::rect(0, 60, 128, 68)], 128);
        let mut resist = clip.raster.clone();
        for x in 62..66 {
            for y in 60..68 {
                if !(63..65).contains(&y) {
                    resist.set(y, x, 0); // pinch to 2 px
                }
            }
        }
        let rules = OracleRules { neck_width_px: 4, bridge_gap_px: 3, box_size_px: 69 };
        let v = find_violations(&clip.raster, &resist, &rules);
        assert!(!v.is_empty());
        assert!(v.iter().all(|v| v.class_id == NECKING && v.printed == 2 && v.drawn == 8));
        let boxes = hotspot_oracle(&clip, &resist, &rules);
        assert_eq!(boxes.len(), 1);
        let (cx, cy) = boxes[0].center();
        assert!((cx - 64.0).abs() <= 0.5 && (cy - 64.0).abs() <= 0.5, "{cx},{cy}");
    }

    #[test]
    fn long_violation_runs_split_into_pieces() {
        // 240 px of violations in a row: three boxes
        let pts: Vec<(f64, f64)> = (0..240).map(|i| (i as f64 + 8.5, 100.0)).collect();
        let clusters = link(&pts, 34.5);
        assert_eq!(clusters.len(), 1);
        let means = split_means(&clusters[0], 69.0);
        assert_eq!(means.len(), 3);
        // two far-apart points stay separate
        assert_eq!(link(&[(0.0, 0.0), (40.0, 0.0)], 34.5).len(), 2);
    }

    #[test]
    fn line_ends_are_not_necks() {
        let clip = clip_from(vec![Polygon::rect(30, 60, 90, 68)], 128);
        let mut resist = clip.raster.clone();
        // round the ends off
        for y in 60..68 {
            for x in [30, 31, 88, 89] {
                resist.set(y, x, 0);
            }
        }
        assert!(find_violations(&clip.raster, &resist, &OracleRules::default()).is_empty());
    }
}
