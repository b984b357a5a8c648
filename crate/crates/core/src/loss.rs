// SPDX-License-Identifier: Apache-2.0

//! Focal, smooth-L1 and distance-IoU losses with analytic gradients, all in
//! f64.

use serde::{Deserialize, Serialize};

use crate::boxes::{decode, Bbox, DW_CLAMP};
use crate::matching::{AnchorLabel, MatchResult};
use crate::tensor::sigmoid;

/// Probability clamp keeping `log` finite.
pub const EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiouDenominator {
    /// `d^2 / c^2`.
    Squared,
    /// `d^2 / c`.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub diou_denominator: DiouDenominator,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0, lambda: 0.02, diou_denominator: DiouDenominator::Squared }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub focal: f64,
    pub box_reg: f64,
    pub diou: f64,
    pub total: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub fn total_loss(focal: f64, box_reg: f64, diou: f64, lambda: f64) -> f64 {
    box_reg + focal + lambda * diou
}

/// Per-element focal loss for probability `p` of a positive or negative target.
pub fn focal(p: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    if positive {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// `d focal / d p` (zero where the clamp is active).
pub fn focal_grad_prob(p: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    if p <= EPS || p >= 1.0 - EPS {
        return 0.0;
    }
    if positive {
        alpha * (gamma * (1.0 - p).powf(gamma - 1.0) * p.ln() - (1.0 - p).powf(gamma) / p)
    } else {
        -(1.0 - alpha) * (gamma * p.powf(gamma - 1.0) * (1.0 - p).ln() - p.powf(gamma) / (1.0 - p))
    }
}

/// `d focal / d z` for `p = sigmoid(z)`, written without the `1/p` factor.
pub fn focal_grad_logit(z: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = sigmoid(z);
    if p <= EPS || p >= 1.0 - EPS {
        return 0.0;
    }
    if positive {
        alpha * (1.0 - p).powf(gamma) * (gamma * p * p.ln() - (1.0 - p))
    } else {
        (1.0 - alpha) * p.powf(gamma) * (p - gamma * (1.0 - p) * (1.0 - p).ln())
    }
}

/// Huber with unit threshold and its derivative in `d`.
pub fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

/// `1 - IoU + |b - b_gt|^2 / c^2` (or `/ c` under [`DiouDenominator::Literal`])
/// and its gradient with respect to the predicted box coordinates.
pub fn diou(b: &Bbox, g: &Bbox, denom: DiouDenominator) -> (f64, [f64; 4]) {
    let (w, h) = (b[2] - b[0], b[3] - b[1]);
    let area_b = w.max(0.0) * h.max(0.0);
    let area_g = (g[2] - g[0]).max(0.0) * (g[3] - g[1]).max(0.0);
    let (ex0, ey0) = (b[0].min(g[0]), b[1].min(g[1]));
    let (ex1, ey1) = (b[2].max(g[2]), b[3].max(g[3]));
    let (ew, eh) = (ex1 - ex0, ey1 - ey0);
    let c2 = ew * ew + eh * eh;
    if c2 <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    // IoU and its gradient
    let iw = b[2].min(g[2]) - b[0].max(g[0]);
    let ih = b[3].min(g[3]) - b[1].max(g[1]);
    let (mut v_iou, mut d_iou) = (0.0, [0.0; 4]);
    if iw > 0.0 && ih > 0.0 && area_b > 0.0 && area_g > 0.0 {
        let inter = iw * ih;
        let union = area_b + area_g - inter;
        v_iou = inter / union;
        let d_inter = [
            if b[0] > g[0] { -ih } else { 0.0 },
            if b[1] > g[1] { -iw } else { 0.0 },
            if b[2] < g[2] { ih } else { 0.0 },
            if b[3] < g[3] { iw } else { 0.0 },
        ];
        let d_area = [-h, -w, h, w];
        for i in 0..4 {
            let d_union = d_area[i] - d_inter[i];
            d_iou[i] = (d_inter[i] * union - inter * d_union) / (union * union);
        }
    }
    let (dcx, dcy) = ((b[0] + b[2] - g[0] - g[2]) / 2.0, (b[1] + b[3] - g[1] - g[3]) / 2.0);
    let d2 = dcx * dcx + dcy * dcy;
    let d_d2 = [dcx, dcy, dcx, dcy];
    let d_c2 = [
        if b[0] < g[0] { -2.0 * ew } else { 0.0 },
        if b[1] < g[1] { -2.0 * eh } else { 0.0 },
        if b[2] > g[2] { 2.0 * ew } else { 0.0 },
        if b[3] > g[3] { 2.0 * eh } else { 0.0 },
    ];
    let mut grad = [0.0; 4];
    let penalty = match denom {
        DiouDenominator::Squared => {
            for i in 0..4 {
                grad[i] = (d_d2[i] * c2 - d2 * d_c2[i]) / (c2 * c2);
            }
            d2 / c2
        }
        DiouDenominator::Literal => {
            let c = c2.sqrt();
            for i in 0..4 {
                grad[i] = d_d2[i] / c - d2 * d_c2[i] / (2.0 * c2 * c);
            }
            d2 / c
        }
    };
    for i in 0..4 {
        grad[i] -= d_iou[i];
    }
    (1.0 - v_iou + penalty, grad)
}

/// Jacobian-vector product of [`decode`]: maps a gradient on box corners to
/// one on deltas.
pub fn decode_backward(anchor: &Bbox, d: &[f64; 4], g_box: &[f64; 4]) -> [f64; 4] {
    let (aw, ah) = (anchor[2] - anchor[0], anchor[3] - anchor[1]);
    let w = d[2].min(DW_CLAMP).exp() * aw;
    let h = d[3].min(DW_CLAMP).exp() * ah;
    let dw_on = if d[2] < DW_CLAMP { 1.0 } else { 0.0 };
    let dh_on = if d[3] < DW_CLAMP { 1.0 } else { 0.0 };
    [
        aw * (g_box[0] + g_box[2]),
        ah * (g_box[1] + g_box[3]),
        dw_on * (w / 2.0) * (g_box[2] - g_box[0]),
        dh_on * (h / 2.0) * (g_box[3] - g_box[1]),
    ]
}

/// Output of [`detection_loss`]: values and gradients on the raw head outputs.
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    /// `d total / d logit`, laid out like the logits (`anchor * K + class`).
    pub grad_logits: Vec<f64>,
    /// `d total / d delta`, laid out `anchor * 4 + j`.
    pub grad_deltas: Vec<f64>,
}

/// The weighted three-term loss of one image.
///
/// `logits`: `[anchors * K]`; `deltas`: `[anchors * 4]`; `classes`: class id
/// of each ground truth.
pub fn detection_loss(
    anchors: &[Bbox],
    gts: &[Bbox],
    classes: &[u32],
    m: &MatchResult,
    logits: &[f64],
    deltas: &[f64],
    num_classes: usize,
    cfg: &LossConfig,
) -> LossOutput {
    let k = num_classes;
    let npos = m.num_positive();
    let norm = npos.max(1) as f64;
    let mut grad_logits = vec![0.0; logits.len()];
    let mut grad_deltas = vec![0.0; deltas.len()];
    let (mut focal_sum, mut negatives) = (0.0, 0);
    for (a, label) in m.labels.iter().enumerate() {
        let target = match *label {
            AnchorLabel::Ignored => continue,
            AnchorLabel::Negative => {
                negatives += 1;
                None
            }
            AnchorLabel::Positive(j) => Some(classes[j] as usize),
        };
        for c in 0..k {
            let z = logits[a * k + c];
            let pos = target == Some(c);
            focal_sum += focal(sigmoid(z), pos, cfg.alpha, cfg.gamma);
            grad_logits[a * k + c] = focal_grad_logit(z, pos, cfg.alpha, cfg.gamma) / norm;
        }
    }
    let (mut reg_sum, mut diou_sum) = (0.0, 0.0);
    for &(a, t) in &m.targets {
        let AnchorLabel::Positive(j) = m.labels[a] else { unreachable!("targets only for positives") };
        let d: [f64; 4] = deltas[a * 4..a * 4 + 4].try_into().expect("4 deltas");
        let mut g = [0.0; 4];
        for i in 0..4 {
            let (v, dv) = smooth_l1(d[i] - t[i]);
            reg_sum += v;
            g[i] += dv / (4.0 * norm);
        }
        let pred = decode(&anchors[a], &d);
        let (v, gb) = diou(&pred, &gts[j], cfg.diou_denominator);
        diou_sum += v;
        let gd = decode_backward(&anchors[a], &d, &gb);
        for i in 0..4 {
            g[i] += cfg.lambda * gd[i] / norm;
            grad_deltas[a * 4 + i] = g[i];
        }
    }
    let focal_v = focal_sum / norm;
    let reg_v = reg_sum / (4.0 * norm);
    let diou_v = diou_sum / norm;
    LossOutput {
        breakdown: LossBreakdown {
            focal: focal_v,
            box_reg: reg_v,
            diou: diou_v,
            total: total_loss(focal_v, reg_v, diou_v, cfg.lambda),
            positives: npos,
            negatives,
        },
        grad_logits,
        grad_deltas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_scalars() {
        assert!((focal(0.5, true, 0.25, 2.0) - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((focal(0.9, false, 0.25, 2.0) - 0.75 * 0.81 * 10f64.ln()).abs() < 1e-12);
        assert!(focal(1.0, true, 0.25, 2.0) < 1e-12);
    }

    #[test]
    fn logit_gradient_matches_chain_rule() {
        for &z in &[-3.0, -0.2, 0.4, 2.5] {
            for pos in [true, false] {
                let p = sigmoid(z);
                let chain = focal_grad_prob(p, pos, 0.25, 2.0) * p * (1.0 - p);
                assert!((chain - focal_grad_logit(z, pos, 0.25, 2.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diou_fixtures() {
        let (v, _) = diou(&[0.0, 0.0, 1.0, 1.0], &[2.0, 0.0, 3.0, 1.0], DiouDenominator::Squared);
        assert!((v - 1.4).abs() < 1e-12);
        let (v, _) = diou(&[0.5, 0.5, 1.5, 1.5], &[0.0, 0.0, 2.0, 2.0], DiouDenominator::Squared);
        assert!((v - 0.75).abs() < 1e-12);
        assert_eq!(diou(&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0, 1.0, 1.0], DiouDenominator::Squared).0, 0.0);
    }

    #[test]
    fn smooth_l1_scalars() {
        assert_eq!(smooth_l1(0.5).0, 0.125);
        assert_eq!(smooth_l1(2.0).0, 1.5);
        assert_eq!(smooth_l1(-2.0), (1.5, -1.0));
    }

    #[test]
    fn total_weights() {
        assert!((total_loss(2.0, 1.0, 3.0, 0.02) - 3.06).abs() < 1e-12);
        assert_eq!(total_loss(2.0, 1.0, 3.0, 0.0), 3.0);
    }
}
