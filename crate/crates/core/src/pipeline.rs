// SPDX-License-Identifier: Apache-2.0

//! Model container, training loop and inference.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{decode_clipped, generate_anchors, nms, AnchorSet, Bbox, Detection};
use crate::config::RunConfig;
use crate::dataset::Prepared;
use crate::error::{Error, Result};
use crate::layout::HotspotBox;
use crate::loss::{detection_loss, LossBreakdown};
use crate::matching::match_anchors;
use crate::metrics::DetectionRecord;
use crate::model::Detector;
use crate::raster::Bitmap;
use crate::tensor::{sigmoid, Adam, Array, Float, Graph, ParamStore};

/// Network structure plus its f32 parameters and the configuration that
/// built them.
#[derive(Clone)]
pub struct Model {
    pub cfg: RunConfig,
    pub arch: Detector,
    pub params: ParamStore<f32>,
    pub anchors: AnchorSet,
}

impl Model {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let arch = Detector::new(&cfg.model, &cfg.anchors, &mut params, cfg.seed)?;
        let s = cfg.model.input_size;
        let anchors = generate_anchors(s, s, &cfg.anchors)?;
        Ok(Self { cfg: cfg.clone(), arch, params, anchors })
    }
}

/// Resamples a binary clip to `size x size`: block mean when shrinking by an
/// integer factor, pixel replication when growing by one.
pub fn resample(b: &Bitmap, size: usize) -> Result<Vec<f32>> {
    let (h, w) = b.dims();
    if h != w {
        return Err(Error::Shape(format!("clips must be square, got {h}x{w}")));
    }
    if size <= h && h % size == 0 {
        let f = h / size;
        let inv = 1.0 / (f * f) as f32;
        let mut out = vec![0f32; size * size];
        for y in 0..h {
            for x in 0..w {
                out[(y / f) * size + x / f] += b.get(y, x) as f32 * inv;
            }
        }
        Ok(out)
    } else if size > h && size % h == 0 {
        let f = size / h;
        Ok((0..size * size).map(|i| b.get(i / size / f, i % size / f) as f32).collect())
    } else {
        Err(Error::Shape(format!("cannot resample {h} px clips to {size} px")))
    }
}

/// Splits a `fold*S x fold*S` plane into `fold^2` planes of `S x S`, channel
/// `dy*fold + dx` holding pixel `(fold*y + dy, fold*x + dx)`.
pub fn fold_plane(plane: &[f32], size: usize, fold: usize) -> Vec<f32> {
    let big = size * fold;
    let mut out = vec![0f32; plane.len()];
    for y in 0..big {
        for x in 0..big {
            let c = (y % fold) * fold + x % fold;
            out[(c * size + y / fold) * size + x / fold] = plane[y * big + x];
        }
    }
    out
}

/// Stacks a batch into the image `[N,fold^2,S,S]` and deformation `[N,3,H,W]` inputs.
pub fn encode_batch<T: Float>(
    batch: &[&Prepared],
    size: usize,
    fold: usize,
    deformation_scale: f64,
) -> Result<(Array<T>, Array<T>)> {
    let n = batch.len();
    let mut img = Vec::with_capacity(n * fold * fold * size * size);
    for p in batch {
        let plane = resample(&p.sample.clip.raster, size * fold)?;
        img.extend(fold_plane(&plane, size, fold).into_iter().map(|v| T::of(v as f64)));
    }
    let (h, w) = batch.first().map_or((0, 0), |p| p.deformation.dims());
    let mut de = Vec::with_capacity(n * 3 * h * w);
    for p in batch {
        if p.deformation.dims() != (h, w) {
            return Err(Error::Shape("deformation maps in a batch must share a shape".into()));
        }
        for ch in p.deformation.channels() {
            de.extend(ch.data().iter().map(|&v| T::of(v * deformation_scale)));
        }
    }
    Ok((Array::from_vec(&[n, fold * fold, size, size], img), Array::from_vec(&[n, 3, h, w], de)))
}

/// Copies image `b` of a `[N, A*C, H, W]` head output into anchor-major
/// order `((y * W + x) * A + a) * C + c`.
fn gather<T: Float>(v: &Array<T>, b: usize, a: usize, c: usize, out: &mut Vec<f64>) {
    let (_, ch, h, w) = v.dims4();
    debug_assert_eq!(ch, a * c);
    let base = &v.data()[b * ch * h * w..(b + 1) * ch * h * w];
    for y in 0..h {
        for x in 0..w {
            for ai in 0..a {
                for ci in 0..c {
                    out.push(base[(ai * c + ci) * h * w + y * w + x].f64());
                }
            }
        }
    }
}

/// Inverse of [`gather`]: writes anchor-major gradients into head layout.
fn scatter<T: Float>(g: &[f64], b: usize, a: usize, c: usize, dst: &mut Array<T>) {
    let (_, ch, h, w) = dst.dims4();
    let base = &mut dst.data_mut()[b * ch * h * w..(b + 1) * ch * h * w];
    let mut i = 0;
    for y in 0..h {
        for x in 0..w {
            for ai in 0..a {
                for ci in 0..c {
                    base[(ai * c + ci) * h * w + y * w + x] = T::of(g[i]);
                    i += 1;
                }
            }
        }
    }
}

fn scaled_gts(p: &Prepared, size: usize) -> (Vec<Bbox>, Vec<u32>) {
    let s = size as f64 / p.sample.clip.width() as f64;
    let boxes = p.sample.boxes.iter().map(|b| b.scaled(s).coords()).collect();
    let classes = p.sample.boxes.iter().map(|b| b.class_id).collect();
    (boxes, classes)
}

/// Mean loss of a batch and the parameter gradients of that mean.
pub fn batch_loss_and_grads<T: Float>(
    model: &Detector,
    params: &ParamStore<T>,
    anchors: &AnchorSet,
    cfg: &RunConfig,
    batch: &[&Prepared],
) -> Result<(LossBreakdown, Vec<(crate::tensor::ParamId, Array<T>)>)> {
    let size = cfg.model.input_size;
    let (img, de) = encode_batch::<T>(batch, size, cfg.model.input_fold, cfg.model.deformation_scale)?;
    let g = Graph::<T>::new();
    let x = g.input(img, false);
    let fwd = model.forward(&g, params, x, &de)?;
    let a = model.anchors_per_location;
    let k = cfg.model.num_classes;
    let all_anchors = anchors.all();
    let n = batch.len();
    let mut sum = LossBreakdown::default();
    let mut seeds_cls: Vec<Array<T>> = fwd.cls.iter().map(|v| Array::zeros(&g.shape(*v))).collect();
    let mut seeds_reg: Vec<Array<T>> = fwd.reg.iter().map(|v| Array::zeros(&g.shape(*v))).collect();
    let cls_vals: Vec<_> = fwd.cls.iter().map(|v| g.value(*v)).collect();
    let reg_vals: Vec<_> = fwd.reg.iter().map(|v| g.value(*v)).collect();
    for (b, p) in batch.iter().enumerate() {
        let (gts, classes) = scaled_gts(p, size);
        let m = match_anchors(&all_anchors, &gts);
        let (mut logits, mut deltas) = (Vec::new(), Vec::new());
        for l in 0..3 {
            gather(&cls_vals[l], b, a, k, &mut logits);
            gather(&reg_vals[l], b, a, 4, &mut deltas);
        }
        let out = detection_loss(&all_anchors, &gts, &classes, &m, &logits, &deltas, k, &cfg.loss);
        let inv_n = 1.0 / n as f64;
        let (mut lo, mut ro) = (0, 0);
        for l in 0..3 {
            let cnt = anchors.levels[l].boxes.len();
            let gl: Vec<f64> = out.grad_logits[lo..lo + cnt * k].iter().map(|v| v * inv_n).collect();
            let gr: Vec<f64> = out.grad_deltas[ro..ro + cnt * 4].iter().map(|v| v * inv_n).collect();
            scatter(&gl, b, a, k, &mut seeds_cls[l]);
            scatter(&gr, b, a, 4, &mut seeds_reg[l]);
            lo += cnt * k;
            ro += cnt * 4;
        }
        let bd = out.breakdown;
        sum.focal += bd.focal * inv_n;
        sum.box_reg += bd.box_reg * inv_n;
        sum.diou += bd.diou * inv_n;
        sum.total += bd.total * inv_n;
        sum.positives += bd.positives;
        sum.negatives += bd.negatives;
    }
    let mut seeds = Vec::new();
    for (l, (c, r)) in seeds_cls.into_iter().zip(seeds_reg).enumerate() {
        seeds.push((fwd.cls[l], c));
        seeds.push((fwd.reg[l], r));
    }
    Ok((sum, g.backward(&seeds).into_params()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub focal: f64,
    pub box_reg: f64,
    pub diou: f64,
    /// Mean global gradient norm before clipping.
    pub grad_norm: f64,
    pub seconds: f64,
}

/// Rescales `grads` to at most `max_norm` (0 disables) and returns the norm
/// before rescaling.
fn clip_gradients(grads: &mut [(crate::tensor::ParamId, Array<f32>)], max_norm: f64) -> f64 {
    let norm: f64 = grads.iter().flat_map(|(_, g)| g.data()).map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Trains `model` in place. `on_epoch` runs after every epoch (checkpointing,
/// logging); a non-finite loss aborts with [`Error::Diverged`] before the
/// parameters are updated.
pub fn train(
    model: &mut Model,
    data: &[Prepared],
    mut on_epoch: impl FnMut(&Model, &EpochLog) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let cfg = model.cfg.clone();
    let mut opt = Adam::<f32>::new(cfg.train.lr);
    opt.weight_decay = cfg.train.weight_decay;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_5a3b1e);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::new();
    let per_epoch = data.len().div_ceil(cfg.train.batch_size);
    let total_steps = per_epoch * cfg.train.epochs;
    for epoch in 0..cfg.train.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        let (mut batches, mut norms) = (0, 0.0);
        for (step, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, mut grads) = batch_loss_and_grads(&model.arch, &model.params, &model.anchors, &cfg, &batch)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: loss.total });
            }
            norms += clip_gradients(&mut grads, cfg.train.clip_grad_norm);
            opt.lr = cfg.train.lr * cfg.train.schedule.factor(epoch * per_epoch + step, total_steps);
            opt.step(&mut model.params, &grads);
            acc.total += loss.total;
            acc.focal += loss.focal;
            acc.box_reg += loss.box_reg;
            acc.diou += loss.diou;
            batches += 1;
        }
        let nb = batches as f64;
        let log = EpochLog {
            epoch,
            total: acc.total / nb,
            focal: acc.focal / nb,
            box_reg: acc.box_reg / nb,
            diou: acc.diou / nb,
            grad_norm: norms / nb,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(model, &log)?;
        logs.push(log);
    }
    Ok(logs)
}

/// Runs the network on `data` and returns post-NMS detections in clip
/// pixel coordinates.
pub fn detect(model: &Model, data: &[Prepared]) -> Result<Vec<DetectionRecord>> {
    let cfg = &model.cfg;
    let size = cfg.model.input_size;
    let a = model.arch.anchors_per_location;
    let k = cfg.model.num_classes;
    let mut out = Vec::new();
    for chunk in data.chunks(cfg.train.batch_size.max(1)) {
        let batch: Vec<&Prepared> = chunk.iter().collect();
        let (img, de) = encode_batch::<f32>(&batch, size, cfg.model.input_fold, cfg.model.deformation_scale)?;
        let g = Graph::<f32>::inference();
        let x = g.input(img, false);
        let fwd = model.arch.forward(&g, &model.params, x, &de)?;
        for (b, p) in batch.iter().enumerate() {
            let back = p.sample.clip.width() as f64 / size as f64;
            let mut dets = Vec::new();
            for l in 0..3 {
                let (mut logits, mut deltas) = (Vec::new(), Vec::new());
                gather(&g.value(fwd.cls[l]), b, a, k, &mut logits);
                gather(&g.value(fwd.reg[l]), b, a, 4, &mut deltas);
                for (ai, anchor) in model.anchors.levels[l].boxes.iter().enumerate() {
                    for c in 0..k {
                        let score = sigmoid(logits[ai * k + c]);
                        if score < cfg.eval.score_floor {
                            continue;
                        }
                        let d: [f64; 4] = deltas[ai * 4..ai * 4 + 4].try_into().expect("4 deltas");
                        let bx = decode_clipped(anchor, &d, size, size)?;
                        if bx[2] <= bx[0] || bx[3] <= bx[1] {
                            continue;
                        }
                        let bbox = HotspotBox { x1: bx[0], y1: bx[1], x2: bx[2], y2: bx[3], class_id: c as u32, score }
                            .scaled(back);
                        dets.push(Detection { bbox, level: l + 3 });
                    }
                }
            }
            let kept = nms(&dets, cfg.eval.nms_iou, cfg.eval.score_floor);
            out.extend(kept.iter().take(cfg.eval.max_detections).map(|d| DetectionRecord::new(&p.sample.clip.id, &d.bbox)));
        }
    }
    Ok(out)
}
