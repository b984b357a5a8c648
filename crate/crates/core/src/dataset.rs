// SPDX-License-Identifier: Apache-2.0

//! Dataset directories: `clips/<id>.png` plus `annotations.jsonl`, one
//! directory per split.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::DataConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::layout::{clip_dataset, generate_layout, hotspot_oracle, ClipMode, HotspotBox, LayoutClip, OracleRules, Polygon};
use crate::litho::{DeformationMap, Simulator};
use crate::raster::Bitmap;

/// One line of `annotations.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub id: String,
    pub clip_size: usize,
    pub pitch_nm: f64,
    /// `[x1, y1, x2, y2, class_id]`.
    pub boxes: Vec<[f64; 5]>,
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub clip: LayoutClip,
    pub boxes: Vec<HotspotBox>,
}

impl Sample {
    pub fn annotation(&self) -> Annotation {
        Annotation {
            id: self.clip.id.clone(),
            clip_size: self.clip.width(),
            pitch_nm: self.clip.pitch_nm,
            boxes: self.boxes.iter().map(|b| [b.x1, b.y1, b.x2, b.y2, b.class_id as f64]).collect(),
        }
    }
}

/// Row runs merged vertically into rectangles whose union is `b`.
pub fn polygons_from_raster(b: &Bitmap) -> Vec<Polygon> {
    let mut done: Vec<Polygon> = Vec::new();
    // open rectangles keyed by (x0, x1) -> y0
    let mut open: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for y in 0..=b.height() {
        let mut runs = Vec::new();
        if y < b.height() {
            let row = b.row(y);
            let mut x = 0;
            while x < row.len() {
                if row[x] == 0 {
                    x += 1;
                    continue;
                }
                let s = x;
                while x < row.len() && row[x] != 0 {
                    x += 1;
                }
                runs.push((s, x));
            }
        }
        let closing: Vec<(usize, usize)> = open.keys().filter(|k| !runs.contains(k)).copied().collect();
        for k in closing {
            let y0 = open.remove(&k).expect("key present");
            done.push(Polygon::rect(k.0 as i64, y0 as i64, k.1 as i64, y as i64));
        }
        for r in runs {
            open.entry(r).or_insert(y);
        }
    }
    done
}

/// Writes one split directory.
pub fn write_split(dir: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::create_dir_all(dir.join("clips"))?;
    for s in samples {
        io::write_bitmap_png(&dir.join("clips").join(format!("{}.png", s.clip.id)), &s.clip.raster)?;
    }
    let ann: Vec<Annotation> = samples.iter().map(Sample::annotation).collect();
    io::write_jsonl(&dir.join("annotations.jsonl"), &ann)
}

/// Reads one split directory, validating every clip and box.
pub fn read_split(dir: &Path) -> Result<Vec<Sample>> {
    let ann: Vec<Annotation> = io::read_jsonl(&dir.join("annotations.jsonl"))?;
    let mut out = Vec::with_capacity(ann.len());
    for a in ann {
        let raster = io::read_bitmap_png(&dir.join("clips").join(format!("{}.png", a.id)))?;
        if raster.dims() != (a.clip_size, a.clip_size) {
            return Err(Error::Format {
                what: "annotation",
                reason: format!("clip {} is {:?}, annotation says {}", a.id, raster.dims(), a.clip_size),
            });
        }
        let polygons = polygons_from_raster(&raster);
        let clip = LayoutClip { id: a.id.clone(), raster, pitch_nm: a.pitch_nm, polygons };
        clip.validate()?;
        let boxes: Vec<HotspotBox> =
            a.boxes.iter().map(|b| HotspotBox::ground_truth(b[0], b[1], b[2], b[3], b[4] as u32)).collect();
        if let Some(b) = boxes.iter().find(|b| !b.is_valid_in(a.clip_size, a.clip_size)) {
            return Err(Error::Format { what: "annotation", reason: format!("clip {}: box {b:?} outside clip", a.id) });
        }
        out.push(Sample { clip, boxes });
    }
    Ok(out)
}

/// Labels clips with the hotspot oracle on their simulated resist.
pub fn label(clips: Vec<LayoutClip>, sim: &Simulator, rules: &OracleRules) -> Result<Vec<Sample>> {
    clips
        .into_iter()
        .map(|clip| {
            let r = sim.simulate(&clip)?;
            let boxes = hotspot_oracle(&clip, &r.resist, rules);
            Ok(Sample { clip, boxes })
        })
        .collect()
}

/// Generates the train and test splits described by `cfg`.
pub fn generate(cfg: &DataConfig, sim: &Simulator, rules: &OracleRules) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let mut train = Vec::new();
    let per = cfg.train_clips.div_ceil(cfg.train_layouts.max(1));
    for i in 0..cfg.train_layouts {
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut layout = generate_layout(&cfg.gen_spec(cfg.train_layout_size, seed))?;
        layout.id = format!("train{i:02}");
        let n = per.min(cfg.train_clips - train.len());
        train.extend(clip_dataset(&layout, ClipMode::Random, cfg.clip_size, n, seed)?);
    }
    let mut test = Vec::new();
    for i in 0..cfg.test_layouts {
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(500_000 + i as u64);
        let mut layout = generate_layout(&cfg.gen_spec(cfg.test_layout_size, seed))?;
        layout.id = format!("test{i:02}");
        test.extend(clip_dataset(&layout, ClipMode::Tiling, cfg.clip_size, 0, 0)?);
    }
    Ok((label(train, sim, rules)?, label(test, sim, rules)?))
}

/// Writes `train/` and `test/` under `root`.
pub fn write_dataset(root: &Path, train: &[Sample], test: &[Sample]) -> Result<()> {
    write_split(&root.join("train"), train)?;
    write_split(&root.join("test"), test)
}

/// A sample with its simulator outputs, ready for the network.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub sample: Sample,
    pub deformation: DeformationMap,
}

pub fn prepare(samples: Vec<Sample>, sim: &Simulator) -> Result<Vec<Prepared>> {
    samples
        .into_iter()
        .map(|s| {
            let r = sim.simulate(&s.clip)?;
            Ok(Prepared { sample: s, deformation: r.deformation })
        })
        .collect()
}
