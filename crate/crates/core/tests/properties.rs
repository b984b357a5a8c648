//! Invariants over randomly drawn inputs.

use std::collections::BTreeMap;

use lithohod::boxes::{decode, encode, iou, nms, Bbox, Detection};
use lithohod::layout::{
    clip_dataset, generate_layout, hotspot_oracle, ClipMode, GenSpec, HotspotBox, OracleRules,
};
use lithohod::litho::{pool_deformation, simulate, DeformationMap, LithoParams};
use lithohod::loss::{diou, focal, DiouDenominator};
use lithohod::matching::{match_anchors, AnchorLabel, NEGATIVE_IOU, POSITIVE_IOU};
use lithohod::metrics::{evaluate, DetectionRecord};
use lithohod::raster::Field;
use lithohod::tensor::attention_weights;
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = Bbox> {
    sized_box(0.5)
}

/// Sides in `[min, 60)`, keeping size ratios inside the decoder's clamp.
fn sized_box(min: f64) -> impl Strategy<Value = Bbox> {
    (0.0..100.0f64, 0.0..100.0f64, min..60.0f64, min..60.0f64).prop_map(|(x, y, w, h)| [x, y, x + w, y + h])
}

fn int_box(max: i32) -> impl Strategy<Value = Bbox> {
    (0..max, 0..max, 1..24i32, 1..24i32).prop_map(|(x, y, w, h)| [x as f64, y as f64, (x + w) as f64, (y + h) as f64])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diou_lies_in_zero_two(a in bbox(), b in bbox()) {
        let (v, _) = diou(&a, &b, DiouDenominator::Squared);
        prop_assert!((0.0..2.0).contains(&v), "{}", v);
    }

    #[test]
    fn focal_is_monotone_in_confidence(p in 0.001..0.998f64, dp in 0.0001..0.001f64) {
        let q = p + dp;
        prop_assert!(focal(q, true, 0.25, 2.0) < focal(p, true, 0.25, 2.0));
        prop_assert!(focal(q, false, 0.25, 2.0) > focal(p, false, 0.25, 2.0));
    }

    #[test]
    fn encode_decode_roundtrip(a in sized_box(2.0), g in sized_box(2.0)) {
        let back = decode(&a, &encode(&a, &g));
        for (x, y) in back.iter().zip(&g) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn nms_output_is_sorted_sparse_subset(
        raw in prop::collection::vec((int_box(60), 0.0..1.0f64, 0u32..2), 0..24),
        thr in 0.1..0.9f64,
    ) {
        let dets: Vec<Detection> = raw
            .iter()
            .map(|(b, s, c)| Detection {
                bbox: HotspotBox { x1: b[0], y1: b[1], x2: b[2], y2: b[3], class_id: *c, score: *s },
                level: 3,
            })
            .collect();
        let kept = nms(&dets, thr, 0.05);
        for k in &kept {
            prop_assert!(dets.iter().any(|d| d == k));
            prop_assert!(k.bbox.score >= 0.05);
        }
        for w in kept.windows(2) {
            prop_assert!(w[0].bbox.score >= w[1].bbox.score);
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                if a.bbox.class_id == b.bbox.class_id {
                    prop_assert!(iou(&a.bbox.coords(), &b.bbox.coords()) <= thr);
                }
            }
        }
    }

    #[test]
    fn matching_respects_thresholds(
        anchors in prop::collection::vec(int_box(40), 1..40),
        gts in prop::collection::vec(int_box(40), 0..5),
    ) {
        let m = match_anchors(&anchors, &gts);
        for (a, label) in anchors.iter().zip(&m.labels) {
            let best = gts.iter().map(|g| iou(a, g)).fold(0.0, f64::max);
            match *label {
                AnchorLabel::Positive(g) => {
                    let v = iou(a, &gts[g]);
                    prop_assert!(v > NEGATIVE_IOU, "positive at {}", v);
                }
                AnchorLabel::Negative => prop_assert!(best < NEGATIVE_IOU),
                AnchorLabel::Ignored => prop_assert!((NEGATIVE_IOU..=POSITIVE_IOU).contains(&best)),
            }
        }
    }

    #[test]
    fn attention_columns_are_distributions(
        q in prop::collection::vec(-3.0..3.0f64, 12),
        k in prop::collection::vec(-3.0..3.0f64, 12),
    ) {
        let (c, hw) = (2, 6);
        let w = attention_weights(&q, &k, c, hw);
        for j in 0..hw {
            let s: f64 = (0..hw).map(|i| w[i * hw + j]).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!((0..hw).all(|i| w[i * hw + j] > 0.0));
        }
    }

    #[test]
    fn pooling_preserves_the_mean(vals in prop::collection::vec(-5.0..5.0f64, 64), f in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let field = Field::from_vec(8, 8, vals).unwrap();
        let map = DeformationMap { dx: field.clone(), dy: field.clone(), magnitude: field.clone(), capped: 0 };
        let p = pool_deformation(&map, 8 / f, 8 / f).unwrap();
        prop_assert!((p.dx.mean() - field.mean()).abs() < 1e-12);
    }

    #[test]
    fn eval_ignores_detection_order(
        raw in prop::collection::vec((0u8..3, 0.0..200.0f64, 0.0..1.0f64), 1..20),
        seed in any::<u64>(),
    ) {
        let gts = fixture_gts();
        let dets: Vec<DetectionRecord> = raw.iter().map(|&(c, x, s)| rec(c, x, s)).collect();
        let mut shuffled = dets.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed as usize).wrapping_add(i * 7919) % n);
        }
        let a = evaluate(&dets, &gts, 3, 0.5).unwrap();
        let b = evaluate(&shuffled, &gts, 3, 0.5).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn top_scored_false_alarm_never_raises_auc(
        raw in prop::collection::vec((0u8..3, 0.0..200.0f64, 0.0..0.99f64), 1..20),
    ) {
        let gts = fixture_gts();
        let mut dets: Vec<DetectionRecord> = raw.iter().map(|&(c, x, s)| rec(c, x, s)).collect();
        let before = evaluate(&dets, &gts, 3, 0.5).unwrap().auc;
        dets.push(DetectionRecord { clip_id: "c0".into(), x1: 400.0, y1: 400.0, x2: 410.0, y2: 410.0, class_id: 0, score: 0.995 });
        let after = evaluate(&dets, &gts, 3, 0.5).unwrap().auc;
        prop_assert!(after <= before + 1e-12, "{} -> {}", before, after);
    }
}

fn rec(clip: u8, x: f64, score: f64) -> DetectionRecord {
    DetectionRecord { clip_id: format!("c{clip}"), x1: x, y1: 0.0, x2: x + 69.0, y2: 69.0, class_id: 0, score }
}

fn fixture_gts() -> BTreeMap<String, Vec<HotspotBox>> {
    (0..3)
        .map(|c| {
            let b = (0..3).map(|i| HotspotBox::ground_truth(i as f64 * 70.0, 0.0, i as f64 * 70.0 + 69.0, 69.0, 0)).collect();
            (format!("c{c}"), b)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn oracle_boxes_stay_inside_and_tightening_keeps_necks(seed in any::<u64>(), neck in 2usize..4) {
        let spec = GenSpec { height: 128, width: 128, seed, ..GenSpec::default() };
        let clip = generate_layout(&spec).unwrap();
        let r = simulate(&clip, &LithoParams::default()).unwrap();
        let loose = OracleRules { neck_width_px: neck, ..OracleRules::default() };
        let tight = OracleRules { neck_width_px: neck + 1, ..OracleRules::default() };
        for b in hotspot_oracle(&clip, &r.resist, &tight) {
            prop_assert!(b.is_valid_in(128, 128));
        }
        // the drawn-width gate moves with the threshold, so compare violations
        // inside the domain where both gates pass
        let necks = |rules: &OracleRules| {
            lithohod::layout::find_violations(&clip.raster, &r.resist, rules)
                .into_iter()
                .filter(|v| v.class_id == 0 && v.drawn >= tight.neck_width_px)
                .map(|v| (v.x.to_bits(), v.y.to_bits()))
                .collect::<std::collections::BTreeSet<_>>()
        };
        prop_assert!(necks(&loose).is_subset(&necks(&tight)));
    }

    #[test]
    fn tiles_are_disjoint(seed in any::<u64>(), side in prop::sample::select(vec![256usize, 320, 512])) {
        let spec = GenSpec { height: side, width: side, seed, density: 0.2, ..GenSpec::default() };
        let layout = generate_layout(&spec).unwrap();
        let tiles = clip_dataset(&layout, ClipMode::Tiling, 64, 0, seed).unwrap();
        prop_assert_eq!(tiles.len(), (side / 64) * (side / 64));
        let mut ids: Vec<_> = tiles.iter().map(|t| t.id.clone()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), tiles.len());
        // tiles partition the covered area, so their foreground sums to the layout's
        let fg: usize = tiles.iter().map(|t| t.raster.count_ones()).sum();
        let covered = (side / 64) * 64;
        prop_assert_eq!(fg, layout.raster.crop(0, 0, covered, covered).count_ones());
    }
}
