// SPDX-License-Identifier: Apache-2.0

//! Property suites with independent reference oracles. Each suite returns a
//! [`Check`]; the `selftest` subcommand and the acceptance tests run them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::boxes::{decode, iou, nms, AnchorConfig, Bbox, Detection};
use crate::layout::HotspotBox;
use crate::loss::{decode_backward, diou, focal, focal_grad_logit, focal_grad_prob, smooth_l1, DiouDenominator};
use crate::matching::{match_anchors, AnchorLabel};
use crate::model::cmf::Cmf;
use crate::model::{Detector, ModelConfig};
use crate::tensor::{sigmoid, Array, Graph, ParamStore};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Runs every suite with its default size.
pub fn run_all() -> Vec<Check> {
    vec![
        gradient_suite(20, 1),
        attention_normalization(10, 2),
        shape_conformance(),
        loss_oracles(),
        iou_monte_carlo(100, 3),
        nms_bruteforce(100, 4),
        matching_bruteforce(50, 1000, 5),
    ]
}

/// `|a - n| / max(|a|, |n|, 1e-4)`. The floor keeps exactly-zero
/// gradients (e.g. query biases under per-column softmax) from turning
/// finite-difference round-off into a large ratio.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn random_box(rng: &mut impl Rng, span: f64, min: f64, max: f64) -> Bbox {
    let (w, h) = (rng.gen_range(min..max), rng.gen_range(min..max));
    let (x, y) = (rng.gen_range(0.0..span), rng.gen_range(0.0..span));
    [x, y, x + w, y + h]
}

/// Largest relative error between analytic or autodiff gradients and
/// central differences for focal, smooth-L1, DIoU (also through the box
/// decoder) and a scalar reduction of the fusion block.
pub fn gradient_suite(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = [0f64; 4];
    for _ in 0..trials {
        for positive in [true, false] {
            let p = rng.gen_range(0.02..0.98);
            let n = central(|p| focal(p, positive, 0.25, 2.0), p, h);
            worst[0] = worst[0].max(rel_err(focal_grad_prob(p, positive, 0.25, 2.0), n));
            let z = rng.gen_range(-4.0..4.0);
            let n = central(|z| focal(sigmoid(z), positive, 0.25, 2.0), z, h);
            worst[0] = worst[0].max(rel_err(focal_grad_logit(z, positive, 0.25, 2.0), n));
        }
        let d = loop {
            let d: f64 = rng.gen_range(-3.0..3.0);
            if (d.abs() - 1.0).abs() > 1e-2 {
                break d;
            }
        };
        worst[1] = worst[1].max(rel_err(smooth_l1(d).1, central(|d| smooth_l1(d).0, d, h)));

        let g = random_box(&mut rng, 20.0, 4.0, 16.0);
        for denom in [DiouDenominator::Squared, DiouDenominator::Literal] {
            let b = random_box(&mut rng, 20.0, 4.0, 16.0);
            let (_, grad) = diou(&b, &g, denom);
            for i in 0..4 {
                let n = central(
                    |v| {
                        let mut bb = b;
                        bb[i] = v;
                        diou(&bb, &g, denom).0
                    },
                    b[i],
                    h,
                );
                worst[2] = worst[2].max(rel_err(grad[i], n));
            }
            // through the decoder
            let anchor = random_box(&mut rng, 20.0, 6.0, 14.0);
            let dl: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-0.3..0.3));
            let gb = diou(&decode(&anchor, &dl), &g, denom).1;
            let gd = decode_backward(&anchor, &dl, &gb);
            for i in 0..4 {
                let n = central(
                    |v| {
                        let mut dd = dl;
                        dd[i] = v;
                        diou(&decode(&anchor, &dd), &g, denom).0
                    },
                    dl[i],
                    h,
                );
                worst[2] = worst[2].max(rel_err(gd[i], n));
            }
        }
        worst[3] = worst[3].max(cmf_gradient_error(&mut rng, h));
    }
    let max = worst.iter().fold(0f64, |a, &b| a.max(b));
    Check::new(
        "gradients",
        max < 1e-4,
        format!("max rel err focal {:.1e} smooth-l1 {:.1e} diou {:.1e} fusion {:.1e}", worst[0], worst[1], worst[2], worst[3]),
    )
}

fn random_array(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Array<f64> {
    Array::from_fn(shape, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Worst relative error of `d sum(out * r) / d theta` over every fusion
/// parameter (all projections, both gates and xi).
fn cmf_gradient_error(rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let mut store = ParamStore::<f64>::new();
    let (c, side) = (4, 3);
    let cmf = Cmf::new(&mut store, 3, c, 2, 3, rng);
    for id in store.ids().collect::<Vec<_>>() {
        // move the gates and xi off their initial value too
        if store.value(id).len() == 1 {
            store.value_mut(id).data_mut()[0] = rng.gen_range(0.5..1.5);
        }
    }
    let de = random_array(rng, &[1, 3, side, side], 1.0);
    let py = random_array(rng, &[1, c, side, side], 1.0);
    let r = random_array(rng, &[1, c, side, side], 1.0);
    let objective = |s: &ParamStore<f64>| {
        let g = Graph::<f64>::inference();
        let (out, _) = cmf.forward(&g, s, g.input(de.clone(), false), g.input(py.clone(), false));
        g.value(out).data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let g = Graph::<f64>::new();
    let (out, _) = cmf.forward(&g, &store, g.input(de.clone(), false), g.input(py.clone(), false));
    let grads = g.backward(&[(out, r.clone())]).into_params();
    let mut worst = 0f64;
    for (id, grad) in &grads {
        for e in 0..grad.len() {
            let mut s = store.clone();
            let x0 = s.value(*id).data()[e];
            s.value_mut(*id).data_mut()[e] = x0 + h;
            let up = objective(&s);
            s.value_mut(*id).data_mut()[e] = x0 - h;
            let down = objective(&s);
            worst = worst.max(rel_err(grad.data()[e], (up - down) / (2.0 * h)));
        }
    }
    // every parameter of the block must have received a gradient
    if grads.len() != store.len() {
        return f64::INFINITY;
    }
    worst
}

/// Every output location's weights are positive and sum to one, for the
/// deformation and pyramid self-attention and the cross block.
pub fn attention_normalization(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0f64;
    let mut min_w = f64::INFINITY;
    for _ in 0..trials {
        let mut store = ParamStore::<f64>::new();
        let c = 8;
        let cmf = Cmf::new(&mut store, 3, c, 4, 6, &mut rng);
        let (h, w) = (rng.gen_range(2..7), rng.gen_range(2..7));
        let de = random_array(&mut rng, &[2, 3, h, w], 1.0);
        let py = random_array(&mut rng, &[2, c, h, w], 1.0);
        let g = Graph::<f64>::inference();
        let (_, weights) = cmf.forward(&g, &store, g.input(de, false), g.input(py, false));
        let hw = h * w;
        let blocks = [weights.de.expect("fusion path"), weights.py, weights.cross.expect("fusion path")];
        for wts in &blocks {
            for b in 0..2 {
                let m = &wts.data()[b * hw * hw..(b + 1) * hw * hw];
                for j in 0..hw {
                    let s: f64 = (0..hw).map(|i| m[i * hw + j]).sum();
                    worst = worst.max((s - 1.0).abs());
                }
                min_w = m.iter().fold(min_w, |a, &v| a.min(v));
            }
        }
    }
    Check::new(
        "attention normalization",
        worst <= 1e-5 && min_w > 0.0,
        format!("max |sum - 1| {worst:.1e}, min weight {min_w:.1e}"),
    )
}

/// Tensor dims of the reference configuration on a 512x512 input.
pub fn shape_conformance() -> Check {
    let cfg = ModelConfig::default();
    let mut store = ParamStore::<f32>::new();
    let det = match Detector::new(&cfg, &AnchorConfig::default(), &mut store, 0) {
        Ok(d) => d,
        Err(e) => return Check::new("shape conformance", false, e.to_string()),
    };
    let g = Graph::<f32>::inference();
    let x = g.input(Array::zeros(&[1, 1, 512, 512]), false);
    let de = Array::zeros(&[1, 3, 512, 512]);
    let f = match det.forward(&g, &store, x, &de) {
        Ok(f) => f,
        Err(e) => return Check::new("shape conformance", false, e.to_string()),
    };
    let a = det.anchors_per_location;
    let mut expected: Vec<(String, Vec<usize>)> = vec![("C5".into(), vec![1, 2048, 16, 16])];
    let mut got: Vec<Vec<usize>> = vec![g.shape(f.c[2])];
    for (l, side) in [64usize, 32, 16].into_iter().enumerate() {
        expected.push((format!("P{}", l + 3), vec![1, 256, side, side]));
        got.push(g.shape(f.p[l]));
        expected.push((format!("CMF{}", l + 3), vec![1, 256, side, side]));
        got.push(g.shape(f.fused[l]));
        expected.push((format!("cls{}", l + 3), vec![1, 12 * cfg.num_classes, side, side]));
        got.push(g.shape(f.cls[l]));
        expected.push((format!("reg{}", l + 3), vec![1, 12 * 4, side, side]));
        got.push(g.shape(f.reg[l]));
    }
    let bad: Vec<String> = expected
        .iter()
        .zip(&got)
        .filter(|((_, e), g)| e != *g)
        .map(|((n, e), g)| format!("{n}: want {e:?} got {g:?}"))
        .collect();
    let ok = bad.is_empty() && a == 12;
    let detail = if ok {
        "C5 2048@16x16, P3-P5 256@64/32/16, fusion 256, 12 anchors/location".to_string()
    } else {
        format!("anchors/location {a}; {}", bad.join("; "))
    };
    Check::new("shape conformance", ok, detail)
}

/// Hand-evaluated loss values.
pub fn loss_oracles() -> Check {
    let cases = [
        ("focal pos p=0.5", focal(0.5, true, 0.25, 2.0), 0.25 * 0.25 * 2f64.ln()),
        ("focal neg p=0.9", focal(0.9, false, 0.25, 2.0), 0.75 * 0.81 * 10f64.ln()),
        ("smooth-l1 0.5", smooth_l1(0.5).0, 0.125),
        ("smooth-l1 2", smooth_l1(2.0).0, 1.5),
        ("diou disjoint", diou(&[0.0, 0.0, 1.0, 1.0], &[2.0, 0.0, 3.0, 1.0], DiouDenominator::Squared).0, 1.0 + 4.0 / 10.0),
        ("diou concentric", diou(&[0.0, 0.0, 2.0, 2.0], &[0.5, 0.5, 1.5, 1.5], DiouDenominator::Squared).0, 1.0 - 0.25),
    ];
    let worst = cases.iter().fold(0f64, |a, c| a.max((c.1 - c.2).abs()));
    let detail = cases.iter().map(|c| format!("{} {:.5}", c.0, c.1)).collect::<Vec<_>>().join(", ");
    Check::new("loss oracles", worst < 1e-4, detail)
}

/// Closed-form IoU against point sampling over the pair's bounding region.
pub fn iou_monte_carlo(pairs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = 40_000;
    let mut worst = 0f64;
    for _ in 0..pairs {
        let a = random_box(&mut rng, 30.0, 2.0, 30.0);
        let b = random_box(&mut rng, 30.0, 2.0, 30.0);
        let (x0, y0) = (a[0].min(b[0]), a[1].min(b[1]));
        let (x1, y1) = (a[2].max(b[2]), a[3].max(b[3]));
        let inside = |r: &Bbox, x: f64, y: f64| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
        let (mut inter, mut union) = (0usize, 0usize);
        for _ in 0..samples {
            let (x, y) = (rng.gen_range(x0..x1), rng.gen_range(y0..y1));
            let (ia, ib) = (inside(&a, x, y), inside(&b, x, y));
            inter += usize::from(ia && ib);
            union += usize::from(ia || ib);
        }
        let mc = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        worst = worst.max((iou(&a, &b) - mc).abs());
    }
    Check::new("iou monte carlo", worst < 2e-2, format!("max |iou - mc| {worst:.4} over {pairs} pairs"))
}

/// Greedy suppression equals the unique subset `K` of above-floor boxes in
/// which no member overlaps a higher-ranked member of its class, and every
/// excluded box overlaps a higher-ranked member. Found by enumerating all
/// subsets.
pub fn nms_bruteforce(sets: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (thr, floor) = (0.5, 0.05);
    let mut mismatches = 0;
    for _ in 0..sets {
        let dets: Vec<Detection> = (0..10)
            .map(|_| {
                let b = random_box(&mut rng, 20.0, 5.0, 15.0);
                let bbox = HotspotBox { x1: b[0], y1: b[1], x2: b[2], y2: b[3], class_id: rng.gen_range(0..2), score: rng.gen() };
                Detection { bbox, level: 3 }
            })
            .collect();
        let cand: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].bbox.score >= floor).collect();
        let ranks_above = |i: usize, j: usize| dets[j].bbox.score > dets[i].bbox.score;
        let conflict = |i: usize, j: usize| {
            dets[i].bbox.class_id == dets[j].bbox.class_id && iou(&dets[i].bbox.coords(), &dets[j].bbox.coords()) > thr
        };
        let mut solutions = Vec::new();
        for mask in 0u32..(1 << cand.len()) {
            let inset = |k: usize| mask & (1 << k) != 0;
            let ok = (0..cand.len()).all(|k| {
                let i = cand[k];
                let blocked = (0..cand.len()).any(|m| inset(m) && ranks_above(i, cand[m]) && conflict(i, cand[m]));
                inset(k) != blocked
            });
            if ok {
                solutions.push(mask);
            }
        }
        let kept = nms(&dets, thr, floor);
        let mut want: Vec<[f64; 4]> = match solutions.as_slice() {
            [m] => (0..cand.len()).filter(|k| m & (1 << k) != 0).map(|k| dets[cand[k]].bbox.coords()).collect(),
            _ => {
                mismatches += 1;
                continue;
            }
        };
        let mut got: Vec<[f64; 4]> = kept.iter().map(|d| d.bbox.coords()).collect();
        let key = |a: &[f64; 4], b: &[f64; 4]| a.partial_cmp(b).expect("finite");
        want.sort_by(key);
        got.sort_by(key);
        mismatches += usize::from(want != got);
    }
    Check::new("nms brute force", mismatches == 0, format!("{mismatches} mismatching sets of {sets}"))
}

/// Reference matcher written from the rules, one anchor at a time.
pub fn reference_match(anchors: &[Bbox], gts: &[Bbox]) -> Vec<AnchorLabel> {
    let ious: Vec<Vec<f64>> = anchors.iter().map(|a| gts.iter().map(|g| iou(a, g)).collect()).collect();
    let mut labels: Vec<AnchorLabel> = ious
        .iter()
        .map(|row| {
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            match row.iter().position(|&v| v == best) {
                Some(j) if best > 0.5 => AnchorLabel::Positive(j),
                Some(_) if best >= 0.3 => AnchorLabel::Ignored,
                _ => AnchorLabel::Negative,
            }
        })
        .collect();
    let mut claims: Vec<(f64, usize, usize)> = Vec::new(); // (iou, gt, anchor)
    for j in 0..gts.len() {
        let best = ious.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        let Some(a) = ious.iter().position(|r| r[j] == best) else { continue };
        if best > 0.3 && best <= 0.5 && !matches!(labels[a], AnchorLabel::Positive(_)) {
            claims.push((best, j, a));
        }
    }
    claims.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut taken = std::collections::HashSet::new();
    for (_, j, a) in claims {
        if taken.insert(a) {
            labels[a] = AnchorLabel::Positive(j);
        }
    }
    labels
}

/// Production matcher against [`reference_match`] on random fixtures with
/// integer coordinates, so exact IoU ties occur.
pub fn matching_bruteforce(trials: usize, anchors: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut disagreements, mut fallbacks, mut positives) = (0, 0, 0);
    for _ in 0..trials {
        let boxes = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Bbox> {
            (0..n)
                .map(|_| {
                    let (x, y) = (rng.gen_range(0..100) as f64, rng.gen_range(0..100) as f64);
                    let (w, h) = (rng.gen_range(4..40) as f64, rng.gen_range(4..40) as f64);
                    [x, y, x + w, y + h]
                })
                .collect()
        };
        let a = boxes(&mut rng, anchors);
        let n_gt = rng.gen_range(1..9);
        let g = boxes(&mut rng, n_gt);
        let got = match_anchors(&a, &g).labels;
        let want = reference_match(&a, &g);
        disagreements += got.iter().zip(&want).filter(|(x, y)| x != y).count();
        positives += want.iter().filter(|l| matches!(l, AnchorLabel::Positive(_))).count();
        fallbacks += want
            .iter()
            .enumerate()
            .filter(|(i, l)| matches!(l, AnchorLabel::Positive(j) if iou(&a[*i], &g[*j]) <= 0.5))
            .count();
    }
    Check::new(
        "matching brute force",
        disagreements == 0,
        format!("{disagreements} disagreements; {positives} positives, {fallbacks} by fallback"),
    )
}
