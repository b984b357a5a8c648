// SPDX-License-Identifier: Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LayoutClip;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    /// `count` windows at uniformly sampled offsets (training).
    Random,
    /// Maximal non-overlapping grid of windows, row-major (testing).
    Tiling,
}

/// Cuts square `clip_size` windows out of `layout`.
pub fn clip_dataset(
    layout: &LayoutClip,
    mode: ClipMode,
    clip_size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<LayoutClip>> {
    if clip_size == 0 || clip_size % 32 != 0 {
        return Err(Error::invalid("clip_size", format!("{clip_size} is not a positive multiple of 32")));
    }
    let (h, w) = layout.raster.dims();
    if clip_size > h || clip_size > w {
        return Err(Error::invalid("clip_size", format!("{clip_size} exceeds layout {h}x{w}")));
    }
    let offsets: Vec<(usize, usize)> = match mode {
        ClipMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| (rng.gen_range(0..=h - clip_size), rng.gen_range(0..=w - clip_size)))
                .collect()
        }
        ClipMode::Tiling => {
            let mut v = Vec::new();
            for r in 0..h / clip_size {
                for c in 0..w / clip_size {
                    v.push((r * clip_size, c * clip_size));
                }
            }
            v
        }
    };
    Ok(offsets
        .iter()
        .enumerate()
        .map(|(i, &(y, x))| {
            let id = match mode {
                ClipMode::Random => format!("{}_r{i:05}", layout.id),
                ClipMode::Tiling => format!("{}_t{:03}_{:03}", layout.id, y / clip_size, x / clip_size),
            };
            let polygons = layout
                .polygons
                .iter()
                .filter_map(|p| p.clip_to(x as i64, y as i64, clip_size as i64, clip_size as i64))
                .collect();
            LayoutClip {
                id,
                raster: layout.raster.crop(y, x, clip_size, clip_size),
                pitch_nm: layout.pitch_nm,
                polygons,
            }
        })
        .collect())
}

/// Window offsets `(y, x)` recovered from tiling ids; used by tests.
#[cfg(test)]
fn tile_offset(id: &str, clip: usize) -> (usize, usize) {
    let t = id.rsplit('_').take(2).collect::<Vec<_>>();
    let col: usize = t[0].parse().unwrap();
    let row: usize = t[1].trim_start_matches('t').parse().unwrap();
    (row * clip, col * clip)
}
