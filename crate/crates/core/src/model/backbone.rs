// SPDX-License-Identifier: Apache-2.0

//! Residual backbone, channel attention on C5, and the P3-P5 pyramid.

use rand::Rng;

use super::nn::{Conv, GroupNorm, Init, Linear};
use crate::tensor::{Float, Graph, ParamStore, Var};

#[derive(Clone, Debug)]
enum Block {
    Basic { c1: Conv, n1: GroupNorm, c2: Conv, n2: GroupNorm, down: Option<(Conv, GroupNorm)> },
    Bottleneck { c1: Conv, n1: GroupNorm, c2: Conv, n2: GroupNorm, c3: Conv, n3: GroupNorm, down: Option<(Conv, GroupNorm)> },
}

impl Block {
    fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, x: Var) -> Var {
        let (y, down) = match self {
            Block::Basic { c1, n1, c2, n2, down } => {
                let y = g.relu(n1.forward(g, s, c1.forward(g, s, x)));
                (n2.forward(g, s, c2.forward(g, s, y)), down)
            }
            Block::Bottleneck { c1, n1, c2, n2, c3, n3, down } => {
                let y = g.relu(n1.forward(g, s, c1.forward(g, s, x)));
                let y = g.relu(n2.forward(g, s, c2.forward(g, s, y)));
                (n3.forward(g, s, c3.forward(g, s, y)), down)
            }
        };
        let skip = match down {
            Some((c, n)) => n.forward(g, s, c.forward(g, s, x)),
            None => x,
        };
        g.relu(g.add(y, skip))
    }
}

/// Stage layout of the supported depths: (blocks per stage, bottleneck).
pub fn stage_plan(depth: usize) -> Option<([usize; 4], bool)> {
    match depth {
        18 => Some(([2, 2, 2, 2], false)),
        34 => Some(([3, 4, 6, 3], false)),
        50 => Some(([3, 4, 6, 3], true)),
        _ => None,
    }
}

/// Output channels of C3, C4, C5.
pub fn stage_channels(depth: usize, base_width: usize) -> [usize; 3] {
    let e = if stage_plan(depth).is_some_and(|p| p.1) { 4 } else { 1 };
    [base_width * 2 * e, base_width * 4 * e, base_width * 8 * e]
}

#[derive(Clone, Debug)]
pub struct Backbone {
    stem: Conv,
    stem_norm: GroupNorm,
    stages: Vec<Vec<Block>>,
}

impl Backbone {
    pub fn new<T: Float>(store: &mut ParamStore<T>, in_channels: usize, depth: usize, base: usize, groups: usize, rng: &mut impl Rng) -> Self {
        let (counts, bottleneck) = stage_plan(depth).expect("depth validated by config");
        let stem = Conv::new(store, "backbone.stem", in_channels, base, 7, 2, false, Init::Kaiming, rng);
        let stem_norm = GroupNorm::new(store, "backbone.stem_norm", base, groups);
        let mut cin = base;
        let mut stages = Vec::new();
        for (si, &n) in counts.iter().enumerate() {
            let mid = base << si;
            let cout = if bottleneck { mid * 4 } else { mid };
            let mut blocks = Vec::new();
            for bi in 0..n {
                let stride = if bi == 0 && si > 0 { 2 } else { 1 };
                let p = format!("backbone.layer{}.{bi}", si + 1);
                let down = (stride != 1 || cin != cout).then(|| {
                    (
                        Conv::new(store, &format!("{p}.down"), cin, cout, 1, stride, false, Init::Kaiming, rng),
                        GroupNorm::new(store, &format!("{p}.down_norm"), cout, groups),
                    )
                });
                let block = if bottleneck {
                    Block::Bottleneck {
                        c1: Conv::new(store, &format!("{p}.conv1"), cin, mid, 1, 1, false, Init::Kaiming, rng),
                        n1: GroupNorm::new(store, &format!("{p}.norm1"), mid, groups),
                        c2: Conv::new(store, &format!("{p}.conv2"), mid, mid, 3, stride, false, Init::Kaiming, rng),
                        n2: GroupNorm::new(store, &format!("{p}.norm2"), mid, groups),
                        c3: Conv::new(store, &format!("{p}.conv3"), mid, cout, 1, 1, false, Init::Kaiming, rng),
                        n3: GroupNorm::new(store, &format!("{p}.norm3"), cout, groups),
                        down,
                    }
                } else {
                    Block::Basic {
                        c1: Conv::new(store, &format!("{p}.conv1"), cin, mid, 3, stride, false, Init::Kaiming, rng),
                        n1: GroupNorm::new(store, &format!("{p}.norm1"), mid, groups),
                        c2: Conv::new(store, &format!("{p}.conv2"), mid, cout, 3, 1, false, Init::Kaiming, rng),
                        n2: GroupNorm::new(store, &format!("{p}.norm2"), cout, groups),
                        down,
                    }
                };
                blocks.push(block);
                cin = cout;
            }
            stages.push(blocks);
        }
        Self { stem, stem_norm, stages }
    }

    /// `[N,1,H,W]` image to `[C3, C4, C5]`.
    pub fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, image: Var) -> [Var; 3] {
        let x = g.relu(self.stem_norm.forward(g, s, self.stem.forward(g, s, image)));
        let mut x = g.max_pool2d(x, 3, 2, 1);
        let mut outs = Vec::new();
        for stage in &self.stages {
            for b in stage {
                x = b.forward(g, s, x);
            }
            outs.push(x);
        }
        [outs[1], outs[2], outs[3]]
    }
}

/// Channel gate: `sigmoid(mlp(avg) + mlp(max))`, shared two-layer MLP.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ChannelAttention {
    pub fn new<T: Float>(store: &mut ParamStore<T>, channels: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        let hidden = (channels / reduction).max(1);
        Self {
            fc1: Linear::new(store, "c_attn.fc1", channels, hidden, rng),
            fc2: Linear::new(store, "c_attn.fc2", hidden, channels, rng),
        }
    }

    /// Gates `[N,C]`.
    pub fn gates<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, x: Var) -> Var {
        let mlp = |d: Var| self.fc2.forward(g, s, g.relu(self.fc1.forward(g, s, d)));
        let a = mlp(g.global_avg_pool(x));
        let m = mlp(g.global_max_pool(x));
        g.sigmoid(g.add(a, m))
    }

    pub fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, x: Var) -> Var {
        let gate = self.gates(g, s, x);
        g.scale_channels(x, gate)
    }
}

/// Top-down pyramid over C3-C5 with 1x1 laterals and 3x3 smoothing.
#[derive(Clone, Debug)]
pub struct Fpn {
    pub lateral: [Conv; 3],
    pub smooth: [Conv; 3],
}

impl Fpn {
    pub fn new<T: Float>(store: &mut ParamStore<T>, cins: [usize; 3], f: usize, rng: &mut impl Rng) -> Self {
        let lat = |store: &mut ParamStore<T>, l: usize, rng: &mut _| {
            Conv::new(store, &format!("fpn.lateral{}", l + 3), cins[l], f, 1, 1, true, Init::Kaiming, rng)
        };
        let sm = |store: &mut ParamStore<T>, l: usize, rng: &mut _| {
            Conv::new(store, &format!("fpn.smooth{}", l + 3), f, f, 3, 1, true, Init::Kaiming, rng)
        };
        let lateral = [lat(store, 0, rng), lat(store, 1, rng), lat(store, 2, rng)];
        let smooth = [sm(store, 0, rng), sm(store, 1, rng), sm(store, 2, rng)];
        Self { lateral, smooth }
    }

    /// `[C3, C4, C5] -> [P3, P4, P5]`.
    pub fn forward<T: Float>(&self, g: &Graph<T>, s: &ParamStore<T>, c: [Var; 3]) -> [Var; 3] {
        let m5 = self.lateral[2].forward(g, s, c[2]);
        let m4 = g.add(self.lateral[1].forward(g, s, c[1]), g.upsample2x(m5));
        let m3 = g.add(self.lateral[0].forward(g, s, c[0]), g.upsample2x(m4));
        [
            self.smooth[0].forward(g, s, m3),
            self.smooth[1].forward(g, s, m4),
            self.smooth[2].forward(g, s, m5),
        ]
    }
}

impl ChannelAttention {
    /// Test hook: zero the output layer and set its bias to 40 so every gate
    /// evaluates to `sigmoid(80)`, which is 1 in both f32 and f64.
    pub fn saturate<T: Float>(&self, store: &mut ParamStore<T>) {
        store.value_mut(self.fc2.weight).data_mut().iter_mut().for_each(|v| *v = T::zero());
        store.value_mut(self.fc2.bias).data_mut().iter_mut().for_each(|v| *v = T::of(40.0));
    }
}
