// SPDX-License-Identifier: Apache-2.0

//! Anchor to ground-truth assignment.

use crate::boxes::{encode, iou, Bbox};

pub const POSITIVE_IOU: f64 = 0.5;
pub const NEGATIVE_IOU: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Index of the matched ground truth.
    Positive(usize),
    Negative,
    Ignored,
}

#[derive(Clone, Debug)]
pub struct MatchResult {
    pub labels: Vec<AnchorLabel>,
    /// Regression target for every positive anchor, by anchor index.
    pub targets: Vec<(usize, [f64; 4])>,
}

impl MatchResult {
    pub fn num_positive(&self) -> usize {
        self.targets.len()
    }
}

/// Assigns each anchor by its best IoU: `> 0.5` positive, `< 0.3` negative,
/// otherwise ignored.
///
/// A ground truth that no anchor covers above 0.5 claims its best anchor
/// (lowest index on ties) when that IoU exceeds 0.3 and the anchor is not
/// already positive. If two such ground truths want the same anchor, the
/// higher IoU wins, then the lower ground-truth index.
pub fn match_anchors(anchors: &[Bbox], gts: &[Bbox]) -> MatchResult {
    let mut labels = vec![AnchorLabel::Negative; anchors.len()];
    if gts.is_empty() {
        return MatchResult { labels, targets: Vec::new() };
    }
    // best gt per anchor (lowest gt index on ties) and best anchor per gt
    let mut best_gt = vec![(0usize, f64::NEG_INFINITY); anchors.len()];
    let mut best_anchor = vec![(usize::MAX, f64::NEG_INFINITY); gts.len()];
    for (a, ab) in anchors.iter().enumerate() {
        for (j, gb) in gts.iter().enumerate() {
            let v = iou(ab, gb);
            if v > best_gt[a].1 {
                best_gt[a] = (j, v);
            }
            if v > best_anchor[j].1 {
                best_anchor[j] = (a, v);
            }
        }
    }
    for (a, &(j, v)) in best_gt.iter().enumerate() {
        labels[a] = if v > POSITIVE_IOU {
            AnchorLabel::Positive(j)
        } else if v < NEGATIVE_IOU {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignored
        };
    }
    let mut claims: Vec<(usize, usize, f64)> = Vec::new(); // (anchor, gt, iou)
    for (j, &(a, v)) in best_anchor.iter().enumerate() {
        if v > POSITIVE_IOU || v <= NEGATIVE_IOU || matches!(labels[a], AnchorLabel::Positive(_)) {
            continue;
        }
        match claims.iter_mut().find(|c| c.0 == a) {
            Some(c) if v > c.2 => *c = (a, j, v),
            Some(_) => {}
            None => claims.push((a, j, v)),
        }
    }
    for (a, j, _) in claims {
        labels[a] = AnchorLabel::Positive(j);
    }
    let targets = labels
        .iter()
        .enumerate()
        .filter_map(|(a, l)| match *l {
            AnchorLabel::Positive(j) => Some((a, encode(&anchors[a], &gts[j]))),
            _ => None,
        })
        .collect();
    MatchResult { labels, targets }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        let gt = [0.0, 0.0, 10.0, 10.0];
        // iou 0.6: [0,0,10,6]; iou 0.2: [0,0,10,2]; iou 0.4: [0,0,10,4]
        let anchors = [[0.0, 0.0, 10.0, 6.0], [0.0, 0.0, 10.0, 2.0], [0.0, 0.0, 10.0, 4.0]];
        let m = match_anchors(&anchors, &[gt]);
        assert_eq!(m.labels, vec![AnchorLabel::Positive(0), AnchorLabel::Negative, AnchorLabel::Ignored]);
    }

    #[test]
    fn fallback_claims_best_anchor() {
        let gt = [0.0, 0.0, 10.0, 10.0];
        let anchors = [[0.0, 0.0, 10.0, 4.2], [0.0, 0.0, 10.0, 3.5], [50.0, 50.0, 60.0, 60.0]];
        let m = match_anchors(&anchors, &[gt]);
        assert_eq!(m.labels[0], AnchorLabel::Positive(0));
        assert_eq!(m.labels[1], AnchorLabel::Ignored);
        assert_eq!(m.num_positive(), 1);
    }

    #[test]
    fn no_fallback_below_point_three() {
        let m = match_anchors(&[[0.0, 0.0, 10.0, 2.5]], &[[0.0, 0.0, 10.0, 10.0]]);
        assert_eq!(m.labels, vec![AnchorLabel::Negative]);
    }
}
