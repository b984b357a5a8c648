// SPDX-License-Identifier: Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rasterize, LayoutClip, Polygon};
use crate::error::{Error, Result};
use crate::raster::Bitmap;

/// Parameters of the random Manhattan wiring generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    pub height: usize,
    pub width: usize,
    /// Inclusive wire width range in pixels.
    pub wire_width: (usize, usize),
    /// Inclusive minimum-spacing range in pixels; each shape draws its own.
    pub spacing: (usize, usize),
    /// Target foreground fraction.
    pub density: f64,
    pub seed: u64,
    /// Probability that a placement is a via-like square.
    pub via_fraction: f64,
    /// Probability that a wire continues perpendicular from an existing wire end.
    pub bend_fraction: f64,
    /// Probability that a placement is a short bump grown from a wire side
    /// until it sits `bump_gap` pixels from a straight neighbouring edge.
    pub bump_fraction: f64,
    pub bump_gap: usize,
    /// Inclusive bump length range along the wire.
    pub bump_length: (usize, usize),
    pub pitch_nm: f64,
    pub max_attempts: usize,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            height: 512,
            width: 512,
            wire_width: (4, 12),
            spacing: (4, 12),
            density: 0.3,
            seed: 0,
            via_fraction: 0.1,
            bend_fraction: 0.3,
            bump_fraction: 0.1,
            bump_gap: 3,
            bump_length: (8, 16),
            pitch_nm: 10.0,
            max_attempts: 200_000,
        }
    }
}

impl GenSpec {
    fn check(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("height/width", "must be positive"));
        }
        let (wmin, wmax) = self.wire_width;
        if wmin < 2 {
            return Err(Error::invalid("wire_width", format!("minimum width {wmin} px < 2 px")));
        }
        if wmax < wmin {
            return Err(Error::invalid("wire_width", "max below min"));
        }
        let (smin, smax) = self.spacing;
        if smin == 0 || smax < smin {
            return Err(Error::invalid("spacing", "range must be positive and ordered"));
        }
        if !(0.0..1.0).contains(&self.density) {
            return Err(Error::invalid("density", format!("{} not in [0, 1)", self.density)));
        }
        if self.bump_gap == 0 || self.bump_length.0 == 0 || self.bump_length.1 < self.bump_length.0 {
            return Err(Error::invalid("bump", "gap and length range must be positive and ordered"));
        }
        if !(self.pitch_nm > 0.0) {
            return Err(Error::invalid("pitch_nm", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Rect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl Rect {
    fn horizontal(&self) -> bool {
        self.x1 - self.x0 >= self.y1 - self.y0
    }
    fn contains(&self, y: i64, x: i64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

struct Canvas {
    occ: Bitmap,
    rects: Vec<Rect>,
    fg: usize,
}

impl Canvas {
    fn inside(&self, r: &Rect) -> bool {
        r.x0 >= 0 && r.y0 >= 0 && r.x1 <= self.occ.width() as i64 && r.y1 <= self.occ.height() as i64
    }

    /// No foreground within `s` pixels of `r`, ignoring pixels of `parent`.
    fn clear_around(&self, r: &Rect, s: i64, parent: Option<&Rect>) -> bool {
        let (h, w) = (self.occ.height() as i64, self.occ.width() as i64);
        for y in (r.y0 - s).max(0)..(r.y1 + s).min(h) {
            for x in (r.x0 - s).max(0)..(r.x1 + s).min(w) {
                if self.occ.get(y as usize, x as usize) != 0 && !parent.is_some_and(|p| p.contains(y, x)) {
                    return false;
                }
            }
        }
        true
    }

    fn new_pixels(&self, r: &Rect) -> usize {
        let mut n = 0;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                n += usize::from(self.occ.get(y as usize, x as usize) == 0);
            }
        }
        n
    }

    fn filled(&self, y: i64, x: i64) -> bool {
        let (h, w) = (self.occ.height() as i64, self.occ.width() as i64);
        y >= 0 && x >= 0 && y < h && x < w && self.occ.get(y as usize, x as usize) != 0
    }

    /// A bump on one side of wire `p` whose tip ends `gap` pixels short of a
    /// neighbouring edge that stays straight `gap + 1` pixels past both ends.
    fn bump(&self, p: &Rect, gap: i64, len: i64, reach: i64, rng: &mut impl Rng) -> Option<Rect> {
        let horizontal = p.horizontal();
        let (lo, hi) = if horizontal { (p.x0, p.x1) } else { (p.y0, p.y1) };
        if hi - lo < len {
            return None;
        }
        let a = rng.gen_range(lo..=hi - len);
        let up = rng.gen_bool(0.5);
        // (along, outward distance) -> pixel; distance 1 is the first row off the wire
        let at = |t: i64, d: i64| {
            let o = if horizontal {
                if up { p.y0 - d } else { p.y1 - 1 + d }
            } else if up {
                p.x0 - d
            } else {
                p.x1 - 1 + d
            };
            if horizontal { (o, t) } else { (t, o) }
        };
        let margin = gap + 1;
        let hit = |t: i64| (1..=reach).find(|&d| self.filled(at(t, d).0, at(t, d).1));
        let d = hit(a)?;
        if d <= gap + 1 || (a - margin..a + len + margin).any(|t| hit(t) != Some(d)) {
            return None;
        }
        let depth = d - 1 - gap;
        let (y0, x0) = at(a, if up { depth } else { 1 });
        let (y1, x1) = at(a + len - 1, if up { 1 } else { depth });
        Some(Rect { x0: x0.min(x1), y0: y0.min(y1), x1: x0.max(x1) + 1, y1: y0.max(y1) + 1 })
    }

    fn paint(&mut self, r: Rect) {
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                if self.occ.get(y as usize, x as usize) == 0 {
                    self.occ.set(y as usize, x as usize, 1);
                    self.fg += 1;
                }
            }
        }
        self.rects.push(r);
    }
}

/// Generates a random Manhattan layout: straight wire segments, perpendicular
/// continuations from wire ends, and via-like squares, placed until the
/// foreground fraction reaches `density`.
pub fn generate_layout(spec: &GenSpec) -> Result<LayoutClip> {
    spec.check()?;
    let (h, w) = (spec.height as i64, spec.width as i64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut canvas = Canvas { occ: Bitmap::new(spec.height, spec.width), rects: Vec::new(), fg: 0 };
    let target = spec.density * (spec.height * spec.width) as f64;
    let (wmin, wmax) = (spec.wire_width.0 as i64, spec.wire_width.1 as i64);
    let (smin, smax) = (spec.spacing.0 as i64, spec.spacing.1 as i64);
    let len_min = 4 * wmax;
    let len_max = (h.min(w) / 2).max(len_min + 1);

    let (blen_min, blen_max) = (spec.bump_length.0 as i64, spec.bump_length.1 as i64);
    let gap = spec.bump_gap as i64;
    let mut attempts = 0;
    while (canvas.fg as f64) < target && attempts < spec.max_attempts {
        attempts += 1;
        let spacing = rng.gen_range(smin..=smax);
        let roll: f64 = rng.gen();
        if roll >= 1.0 - spec.bump_fraction && !canvas.rects.is_empty() {
            let p = canvas.rects[rng.gen_range(0..canvas.rects.len())];
            let len = rng.gen_range(blen_min..=blen_max);
            if let Some(b) = canvas.bump(&p, gap, len, gap + smax + 1, &mut rng) {
                if canvas.clear_around(&b, gap, Some(&p)) && (canvas.fg + canvas.new_pixels(&b)) as f64 <= target * 1.05 {
                    canvas.paint(b);
                }
            }
            continue;
        }
        let (rect, parent) = if roll < spec.via_fraction {
            let side = rng.gen_range(wmax..=wmax + wmin);
            let x0 = rng.gen_range(-side..w);
            let y0 = rng.gen_range(-side..h);
            (Rect { x0, y0, x1: x0 + side, y1: y0 + side }, None)
        } else if roll < spec.via_fraction + spec.bend_fraction && !canvas.rects.is_empty() {
            let p = canvas.rects[rng.gen_range(0..canvas.rects.len())];
            let len = rng.gen_range(len_min..=len_max);
            let at_start = rng.gen_bool(0.5);
            let forward = rng.gen_bool(0.5);
            let r = if p.horizontal() {
                let wd = p.y1 - p.y0;
                let x0 = if at_start { p.x0 } else { p.x1 - wd };
                if forward {
                    Rect { x0, y0: p.y0, x1: x0 + wd, y1: p.y0 + len }
                } else {
                    Rect { x0, y0: p.y1 - len, x1: x0 + wd, y1: p.y1 }
                }
            } else {
                let wd = p.x1 - p.x0;
                let y0 = if at_start { p.y0 } else { p.y1 - wd };
                if forward {
                    Rect { x0: p.x0, y0, x1: p.x0 + len, y1: y0 + wd }
                } else {
                    Rect { x0: p.x1 - len, y0, x1: p.x1, y1: y0 + wd }
                }
            };
            (r, Some(p))
        } else {
            let wd = rng.gen_range(wmin..=wmax);
            let len = rng.gen_range(len_min..=len_max);
            let r = if rng.gen_bool(0.5) {
                let x0 = rng.gen_range(-len / 2..w - len / 2);
                let y0 = rng.gen_range(0..=(h - wd).max(0));
                Rect { x0, y0, x1: x0 + len, y1: y0 + wd }
            } else {
                let x0 = rng.gen_range(0..=(w - wd).max(0));
                let y0 = rng.gen_range(-len / 2..h - len / 2);
                Rect { x0, y0, x1: x0 + wd, y1: y0 + len }
            };
            (r, None)
        };
        // shapes may run off the window; keep the in-window part
        let rect = Rect { x0: rect.x0.max(0), y0: rect.y0.max(0), x1: rect.x1.min(w), y1: rect.y1.min(h) };
        if rect.x1 - rect.x0 < wmin || rect.y1 - rect.y0 < wmin || !canvas.inside(&rect) {
            continue;
        }
        if !canvas.clear_around(&rect, spacing, parent.as_ref()) {
            continue;
        }
        let added = canvas.new_pixels(&rect);
        if (canvas.fg + added) as f64 > target * 1.05 {
            continue;
        }
        canvas.paint(rect);
    }
    if (canvas.fg as f64) < target * 0.9 {
        return Err(Error::invalid(
            "density",
            format!("reached {:.3} of requested {:.3} after {attempts} attempts", canvas.occ.fill_fraction(), spec.density),
        ));
    }
    let polygons: Vec<Polygon> = canvas.rects.iter().map(|r| Polygon::rect(r.x0, r.y0, r.x1, r.y1)).collect();
    debug_assert!(rasterize(&polygons, spec.height, spec.width) == canvas.occ);
    Ok(LayoutClip { id: format!("layout-{}", spec.seed), raster: canvas.occ, pitch_nm: spec.pitch_nm, polygons })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(density: f64, seed: u64) -> GenSpec {
        GenSpec { density, seed, ..GenSpec::default() }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = generate_layout(&spec(0.3, 7)).unwrap();
        let b = generate_layout(&spec(0.3, 7)).unwrap();
        assert_eq!(a.raster, b.raster);
        assert_eq!(a.polygons, b.polygons);
    }

    #[test]
    fn zero_density_is_empty() {
        let c = generate_layout(&spec(0.0, 1)).unwrap();
        assert_eq!(c.raster.count_ones(), 0);
        assert!(c.polygons.is_empty());
    }

    #[test]
    fn density_within_ten_percent() {
        let c = generate_layout(&spec(0.3, 7)).unwrap();
        let frac = c.raster.count_ones() as f64 / (512.0 * 512.0);
        assert!((0.27..=0.33).contains(&frac), "density {frac}");
    }

    #[test]
    fn polygons_reproduce_raster_and_are_rectilinear() {
        let c = generate_layout(&spec(0.25, 3)).unwrap();
        c.validate().unwrap();
        assert!(c.polygons.iter().all(|p| p.is_rectilinear()));
    }

    #[test]
    fn rejects_thin_wires() {
        let s = GenSpec { wire_width: (1, 6), ..GenSpec::default() };
        assert!(matches!(generate_layout(&s), Err(Error::InvalidArgument { arg: "wire_width", .. })));
    }

    #[test]
    fn bump_stops_at_the_requested_gap() {
        let mut canvas = Canvas { occ: Bitmap::new(64, 64), rects: Vec::new(), fg: 0 };
        let wire = Rect { x0: 4, y0: 20, x1: 60, y1: 26 };
        canvas.paint(wire);
        canvas.paint(Rect { x0: 0, y0: 36, x1: 64, y1: 42 });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut found = 0;
        for _ in 0..50 {
            let Some(b) = canvas.bump(&wire, 3, 10, 16, &mut rng) else { continue };
            found += 1;
            assert_eq!(b.x1 - b.x0, 10);
            // grown downwards from y 26 to leave rows 33..36 empty
            assert_eq!((b.y0, b.y1), (26, 33));
        }
        assert!(found > 0);
        // the upper side has no straight neighbour within reach
        let lone = Rect { x0: 4, y0: 36, x1: 60, y1: 42 };
        let mut hits = 0;
        for _ in 0..50 {
            hits += usize::from(canvas.bump(&lone, 3, 10, 5, &mut rng).is_some());
        }
        assert_eq!(hits, 0);
    }

    #[test]
    fn bumps_create_bridging_sites() {
        use crate::layout::{find_violations, OracleRules};
        use crate::litho::{simulate, LithoParams};
        let base = GenSpec { height: 256, width: 256, bump_fraction: 0.0, seed: 9, ..GenSpec::default() };
        let count = |s: &GenSpec| {
            let c = generate_layout(s).unwrap();
            let r = simulate(&c, &LithoParams::default()).unwrap();
            find_violations(&c.raster, &r.resist, &OracleRules::default()).iter().filter(|v| v.class_id == 1).count()
        };
        assert_eq!(count(&base), 0);
        assert!(count(&GenSpec { bump_fraction: 0.2, ..base }) > 0);
    }
}
