// SPDX-License-Identifier: Apache-2.0

//! The detection network: backbone, channel attention, pyramid, per-level
//! fusion with the deformation feature, and shared heads.

pub mod backbone;
pub mod cmf;
pub mod heads;
pub mod nn;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::AnchorConfig;
use crate::error::{Error, Result};
use crate::tensor::{Array, Float, Graph, ParamStore, Var};
use backbone::{stage_channels, stage_plan, Backbone, ChannelAttention, Fpn};
use cmf::{Cmf, FusionWeights};
use heads::Heads;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Residual depth: 18, 34 or 50.
    pub depth: usize,
    /// Channels of the first stage (64 in the standard networks).
    pub base_width: usize,
    pub fpn_channels: usize,
    /// Side of the square network input; clips are resampled to it.
    pub input_size: usize,
    /// Clips are resampled to `input_size * input_fold` and each
    /// `input_fold x input_fold` block is stacked into channels.
    pub input_fold: usize,
    pub num_classes: usize,
    pub reduction: usize,
    pub py_attn_dim: usize,
    pub cross_attn_dim: usize,
    pub norm_groups: usize,
    /// Multiplier applied to deformation values before they enter the network.
    pub deformation_scale: f64,
    pub deformation_pool: DeformationPool,
    pub detector_only: bool,
    pub no_channel_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 50,
            base_width: 64,
            fpn_channels: 256,
            input_size: 512,
            input_fold: 1,
            num_classes: 2,
            reduction: 16,
            py_attn_dim: 16,
            cross_attn_dim: 32,
            norm_groups: 32,
            deformation_scale: 0.25,
            deformation_pool: DeformationPool::Mean,
            detector_only: false,
            no_channel_attention: false,
        }
    }
}

/// How the deformation map is reduced to each pyramid grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeformationPool {
    /// Block mean of all three channels.
    Mean,
    /// Block mean of dx and dy, block max of the magnitude.
    MaxMagnitude,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Err(Error::Config { key: format!("model.{key}"), reason });
        if stage_plan(self.depth).is_none() {
            return bad("depth", format!("{} is not one of 18, 34, 50", self.depth));
        }
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return bad("input_size", format!("{} is not a positive multiple of 32", self.input_size));
        }
        for (k, v) in [
            ("base_width", self.base_width),
            ("fpn_channels", self.fpn_channels),
            ("input_fold", self.input_fold),
            ("num_classes", self.num_classes),
            ("reduction", self.reduction),
            ("py_attn_dim", self.py_attn_dim),
            ("cross_attn_dim", self.cross_attn_dim),
            ("norm_groups", self.norm_groups),
        ] {
            if v == 0 {
                return bad(k, "must be positive".into());
            }
        }
        let c5 = stage_channels(self.depth, self.base_width)[2];
        if c5 % self.reduction != 0 {
            return bad("reduction", format!("C5 has {c5} channels, not divisible by {}", self.reduction));
        }
        Ok(())
    }
}

/// Network structure: parameter ids for every layer. Values live in a
/// separate [`ParamStore`] so the same structure runs in f32 or f64.
#[derive(Clone, Debug)]
pub struct Detector {
    pub cfg: ModelConfig,
    pub anchors_per_location: usize,
    pub backbone: Backbone,
    pub c_attn: ChannelAttention,
    pub fpn: Fpn,
    pub cmf: [Cmf; 3],
    pub heads: Heads,
}

/// Every intermediate of one forward pass.
pub struct Forward<T> {
    pub c: [Var; 3],
    /// C5 after channel attention (C5 itself when disabled).
    pub c5_attended: Var,
    pub gates: Option<Var>,
    pub p: [Var; 3],
    pub fused: [Var; 3],
    /// `[N, A*K, H_l, W_l]` per level.
    pub cls: [Var; 3],
    /// `[N, A*4, H_l, W_l]` per level.
    pub reg: [Var; 3],
    pub weights: Vec<FusionWeights<T>>,
}

impl Detector {
    /// Builds the structure and registers freshly initialised parameters.
    pub fn new<T: Float>(cfg: &ModelConfig, anchors: &AnchorConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new(store, cfg.input_fold * cfg.input_fold, cfg.depth, cfg.base_width, cfg.norm_groups, &mut rng);
        let chans = stage_channels(cfg.depth, cfg.base_width);
        let c_attn = ChannelAttention::new(store, chans[2], cfg.reduction, &mut rng);
        let fpn = Fpn::new(store, chans, cfg.fpn_channels, &mut rng);
        let mk = |store: &mut ParamStore<T>, l: usize, rng: &mut ChaCha8Rng| {
            Cmf::new(store, l, cfg.fpn_channels, cfg.py_attn_dim, cfg.cross_attn_dim, rng)
        };
        let cmf = [mk(store, 3, &mut rng), mk(store, 4, &mut rng), mk(store, 5, &mut rng)];
        let a = anchors.per_location();
        let heads = Heads::new(store, cfg.fpn_channels, a, cfg.num_classes, &mut rng);
        Ok(Self { cfg: cfg.clone(), anchors_per_location: a, backbone, c_attn, fpn, cmf, heads })
    }

    /// `image`: `[N,fold^2,H,W]`; `deformation`: `[N,3,Hs,Ws]` at simulator
    /// resolution, pooled here to each level's grid.
    pub fn forward<T: Float>(
        &self,
        g: &Graph<T>,
        s: &ParamStore<T>,
        image: Var,
        deformation: &Array<T>,
    ) -> Result<Forward<T>> {
        let (n, c, h, w) = {
            let sh = g.shape(image);
            if sh.len() != 4 {
                return Err(Error::Shape(format!("image must be [N,C,H,W], got {sh:?}")));
            }
            (sh[0], sh[1], sh[2], sh[3])
        };
        let want = self.cfg.input_fold * self.cfg.input_fold;
        if c != want || h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Shape(format!("image [{n},{c},{h},{w}]: need {want} channels and dims divisible by 32")));
        }
        let cs = self.backbone.forward(g, s, image);
        let (c5_attended, gates) = if self.cfg.no_channel_attention {
            (cs[2], None)
        } else {
            let gate = self.c_attn.gates(g, s, cs[2]);
            (g.scale_channels(cs[2], gate), Some(gate))
        };
        let p = self.fpn.forward(g, s, [cs[0], cs[1], c5_attended]);
        let mut fused = Vec::new();
        let mut weights = Vec::new();
        for l in 0..3 {
            let (out, wts) = if self.cfg.detector_only {
                self.cmf[l].forward_detector_only(g, s, p[l])
            } else {
                let stride = 8 << l;
                let mut pooled = pool_array(deformation, h / stride, w / stride)?;
                if self.cfg.deformation_pool == DeformationPool::MaxMagnitude {
                    max_pool_channel(deformation, &mut pooled, 2)?;
                }
                let f_de = g.constant(pooled);
                self.cmf[l].forward(g, s, f_de, p[l])
            };
            fused.push(out);
            weights.push(wts);
        }
        let mut cls = Vec::new();
        let mut reg = Vec::new();
        for &f in &fused {
            let (c, r) = self.heads.forward(g, s, f);
            cls.push(c);
            reg.push(r);
        }
        Ok(Forward {
            c: cs,
            c5_attended,
            gates,
            p,
            fused: [fused[0], fused[1], fused[2]],
            cls: [cls[0], cls[1], cls[2]],
            reg: [reg[0], reg[1], reg[2]],
            weights,
        })
    }
}

/// Overwrites channel `ch` of `pooled` with the block max of `x`.
pub fn max_pool_channel<T: Float>(x: &Array<T>, pooled: &mut Array<T>, ch: usize) -> Result<()> {
    let (n, c, h, w) = x.dims4();
    let (_, _, th, tw) = pooled.dims4();
    let (bh, bw) = (h / th, w / tw);
    for b in 0..n {
        let src = &x.data()[(b * c + ch) * h * w..][..h * w];
        let dst = &mut pooled.data_mut()[(b * c + ch) * th * tw..][..th * tw];
        for ty in 0..th {
            for tx in 0..tw {
                let mut m = f64::NEG_INFINITY;
                for y in ty * bh..(ty + 1) * bh {
                    for x in tx * bw..(tx + 1) * bw {
                        m = m.max(src[y * w + x].f64());
                    }
                }
                dst[ty * tw + tx] = T::of(m);
            }
        }
    }
    Ok(())
}

/// Non-overlapping block mean of `[N,C,H,W]` down to `[N,C,th,tw]`.
pub fn pool_array<T: Float>(x: &Array<T>, th: usize, tw: usize) -> Result<Array<T>> {
    let (n, c, h, w) = x.dims4();
    if th == 0 || tw == 0 || h % th != 0 || w % tw != 0 {
        return Err(Error::Shape(format!("cannot pool {h}x{w} to {th}x{tw}")));
    }
    let (bh, bw) = (h / th, w / tw);
    let inv = 1.0 / (bh * bw) as f64;
    let mut out = Array::zeros(&[n, c, th, tw]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(th * tw)) {
        for ty in 0..th {
            for tx in 0..tw {
                let mut acc = 0.0;
                for y in ty * bh..(ty + 1) * bh {
                    for x in tx * bw..(tx + 1) * bw {
                        acc += src[y * w + x].f64();
                    }
                }
                dst[ty * tw + tx] = T::of(acc * inv);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_means_blocks_and_max_replaces_one_channel() {
        // 1 image, 3 channels of 4x4, values distinct per channel
        let x = Array::<f64>::from_fn(&[1, 3, 4, 4], |i| ((i % 16) + 16 * (i / 16)) as f64);
        let mut p = pool_array(&x, 2, 2).unwrap();
        assert_eq!(&p.data()[..4], &[2.5, 4.5, 10.5, 12.5]);
        max_pool_channel(&x, &mut p, 2).unwrap();
        assert_eq!(&p.data()[4..8], &[18.5, 20.5, 26.5, 28.5]);
        assert_eq!(&p.data()[8..], &[37.0, 39.0, 45.0, 47.0]);
        assert!(pool_array(&x, 3, 3).is_err());
    }
}
