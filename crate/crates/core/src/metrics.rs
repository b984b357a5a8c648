// SPDX-License-Identifier: Apache-2.0

//! Detection scoring: greedy matching, recall / false alarms at an operating
//! threshold, the TPR-to-false-alarm curve with its normalised area, and AP.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::boxes::iou;
use crate::error::{Error, Result};
use crate::layout::HotspotBox;

/// Score threshold at which recall, FA and FN are reported.
pub const OPERATING_SCORE: f64 = 0.5;

/// One detection in the exchange format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub clip_id: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class_id: u32,
    pub score: f64,
}

impl DetectionRecord {
    pub fn new(clip_id: &str, b: &HotspotBox) -> Self {
        Self { clip_id: clip_id.to_string(), x1: b.x1, y1: b.y1, x2: b.x2, y2: b.y2, class_id: b.class_id, score: b.score }
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fa: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall: f64,
    pub fa: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ap: f64,
    pub curve: Vec<CurvePoint>,
    pub auc: f64,
    /// Wall-clock time of the evaluated inference; kept out of the JSON so
    /// reports of identical runs compare equal byte for byte.
    #[serde(skip)]
    pub runtime_s: f64,
}

/// Canonical processing order: score descending, then clip id and box corner.
fn order(a: &DetectionRecord, b: &DetectionRecord) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.clip_id.cmp(&b.clip_id))
        .then(a.x1.total_cmp(&b.x1))
        .then(a.y1.total_cmp(&b.y1))
        .then(a.x2.total_cmp(&b.x2))
        .then(a.y2.total_cmp(&b.y2))
        .then(a.class_id.cmp(&b.class_id))
}

/// Detections in canonical order with their TP flag. Each ground truth is
/// used once; a detection takes the unmatched same-class ground truth of its
/// clip with the highest IoU above `match_iou`.
pub fn greedy_match(
    dets: &[DetectionRecord],
    gts: &BTreeMap<String, Vec<HotspotBox>>,
    match_iou: f64,
) -> Vec<(DetectionRecord, bool)> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(order);
    let mut used: BTreeMap<&str, Vec<bool>> = gts.iter().map(|(k, v)| (k.as_str(), vec![false; v.len()])).collect();
    sorted
        .into_iter()
        .map(|d| {
            let mut hit = false;
            if let (Some(boxes), Some(flags)) = (gts.get(&d.clip_id), used.get_mut(d.clip_id.as_str())) {
                let mut best: Option<(usize, f64)> = None;
                for (j, g) in boxes.iter().enumerate() {
                    if flags[j] || g.class_id != d.class_id {
                        continue;
                    }
                    let v = iou(&d.coords(), &g.coords());
                    if v > match_iou && best.is_none_or(|b| v > b.1) {
                        best = Some((j, v));
                    }
                }
                if let Some((j, _)) = best {
                    flags[j] = true;
                    hit = true;
                }
            }
            (d, hit)
        })
        .collect()
}

fn total_gts(gts: &BTreeMap<String, Vec<HotspotBox>>) -> usize {
    gts.values().map(Vec::len).sum()
}

/// Curve over every distinct score (descending) and its area, normalised by
/// the curve's own largest false-alarm count.
///
/// The area integrates, by trapezoids from the origin, the best TPR reached
/// at each false-alarm count. With no false alarms at all the area is the
/// final TPR.
pub fn tpr_fa_curve(
    dets: &[DetectionRecord],
    gts: &BTreeMap<String, Vec<HotspotBox>>,
    match_iou: f64,
) -> Result<(Vec<CurvePoint>, f64)> {
    let g = total_gts(gts);
    if g == 0 {
        return Err(Error::Empty("ground truth (TPR undefined)"));
    }
    let matched = greedy_match(dets, gts, match_iou);
    let mut curve = Vec::new();
    let (mut tp, mut fa) = (0usize, 0usize);
    for (i, (d, hit)) in matched.iter().enumerate() {
        if *hit {
            tp += 1;
        } else {
            fa += 1;
        }
        let last_of_score = matched.get(i + 1).is_none_or(|(n, _)| n.score != d.score);
        if last_of_score {
            curve.push(CurvePoint { threshold: d.score, tpr: tp as f64 / g as f64, fa });
        }
    }
    Ok((curve.clone(), curve_auc(&curve)))
}

/// Normalised area of a curve produced by [`tpr_fa_curve`].
pub fn curve_auc(curve: &[CurvePoint]) -> f64 {
    // best tpr per distinct fa, fa ascending, starting from the origin
    let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for p in curve {
        let fa = p.fa as f64;
        match pts.last_mut() {
            Some(last) if last.0 == fa => last.1 = last.1.max(p.tpr),
            _ => pts.push((fa, p.tpr)),
        }
    }
    let fa_max = pts.last().map_or(0.0, |p| p.0);
    if fa_max == 0.0 {
        return pts.last().map_or(0.0, |p| p.1);
    }
    let area: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum();
    area / fa_max
}

/// All-point interpolated average precision over the score-ranked list.
pub fn average_precision(matched: &[(DetectionRecord, bool)], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let mut pr: Vec<(f64, f64)> = Vec::new(); // (recall, precision) per distinct score
    let mut tp = 0usize;
    for (i, (d, hit)) in matched.iter().enumerate() {
        tp += usize::from(*hit);
        if matched.get(i + 1).is_none_or(|(n, _)| n.score != d.score) {
            pr.push((tp as f64 / total_gt as f64, tp as f64 / (i + 1) as f64));
        }
    }
    // precision envelope from the right
    for i in (0..pr.len().saturating_sub(1)).rev() {
        pr[i].1 = pr[i].1.max(pr[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in pr {
        ap += (r - prev_r) * p;
        prev_r = r;
    }
    ap
}

/// Full report over a test set. `clips` is the number of evaluated clips.
pub fn evaluate(
    dets: &[DetectionRecord],
    gts: &BTreeMap<String, Vec<HotspotBox>>,
    clips: usize,
    match_iou: f64,
) -> Result<EvalReport> {
    if clips == 0 {
        return Err(Error::Empty("test set"));
    }
    let (curve, auc) = tpr_fa_curve(dets, gts, match_iou)?;
    let g = total_gts(gts);
    let matched = greedy_match(dets, gts, match_iou);
    let at_op: Vec<_> = matched.iter().filter(|(d, _)| d.score >= OPERATING_SCORE).collect();
    let tp = at_op.iter().filter(|(_, h)| *h).count();
    let fa = at_op.len() - tp;
    Ok(EvalReport {
        recall: tp as f64 / g as f64,
        fa,
        fn_: g - tp,
        ap: average_precision(&matched, g),
        curve,
        auc,
        runtime_s: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(x: f64) -> HotspotBox {
        HotspotBox::ground_truth(x, 0.0, x + 10.0, 10.0, 0)
    }

    fn det(clip: &str, x: f64, score: f64) -> DetectionRecord {
        DetectionRecord { clip_id: clip.into(), x1: x, y1: 0.0, x2: x + 10.0, y2: 10.0, class_id: 0, score }
    }

    fn gts(v: Vec<HotspotBox>) -> BTreeMap<String, Vec<HotspotBox>> {
        BTreeMap::from([("c".to_string(), v)])
    }

    #[test]
    fn worked_curve() {
        let g = gts(vec![gt(0.0), gt(100.0)]);
        let d = vec![det("c", 0.0, 0.9), det("c", 50.0, 0.8), det("c", 100.0, 0.7)];
        let (curve, auc) = tpr_fa_curve(&d, &g, 0.5).unwrap();
        let pts: Vec<(f64, usize)> = curve.iter().map(|p| (p.tpr, p.fa)).collect();
        assert_eq!(pts, vec![(0.5, 0), (0.5, 1), (1.0, 1)]);
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty() {
        let g = gts(vec![gt(0.0), gt(100.0)]);
        let r = evaluate(&[det("c", 0.0, 1.0), det("c", 100.0, 1.0)], &g, 1, 0.5).unwrap();
        assert_eq!((r.recall, r.fa, r.fn_, r.auc), (1.0, 0, 0, 1.0));
        let r = evaluate(&[], &g, 1, 0.5).unwrap();
        assert_eq!((r.recall, r.fn_), (0.0, 2));
        assert!(evaluate(&[], &g, 0, 0.5).is_err());
        assert!(tpr_fa_curve(&[], &BTreeMap::new(), 0.5).is_err());
    }

    #[test]
    fn counts_fixture() {
        let g = gts((0..10).map(|i| gt(i as f64 * 20.0)).collect());
        let mut d: Vec<_> = (0..8).map(|i| det("c", i as f64 * 20.0, 0.9)).collect();
        d.extend((0..3).map(|i| det("c", 500.0 + i as f64 * 20.0, 0.6)));
        let r = evaluate(&d, &g, 1, 0.5).unwrap();
        assert_eq!((r.recall, r.fa, r.fn_), (0.8, 3, 2));
    }

    #[test]
    fn json_has_six_fields() {
        let g = gts(vec![gt(0.0)]);
        let r = evaluate(&[det("c", 0.0, 0.9)], &g, 1, 0.5).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["ap", "auc", "curve", "fa", "fn", "recall"]);
    }
}
