//! Anchor layout per level, delta coding and non-maximum suppression.

use lithohod::boxes::{decode, encode, generate_anchors, iou, nms, AnchorConfig, Detection};
use lithohod::layout::HotspotBox;
use lithohod::matching::match_anchors;

fn main() -> lithohod::Result<()> {
    let cfg = AnchorConfig::default();
    let set = generate_anchors(256, 256, &cfg)?;
    for (l, level) in set.levels.iter().enumerate() {
        let (w, h) = cfg.shapes(cfg.base_sizes[l])[cfg.per_location() - 1];
        println!("P{}: {} anchors, largest {w:.1}x{h:.1}", l + 3, level.boxes.len());
    }

    let gt = [40.0, 52.0, 109.0, 121.0];
    let m = match_anchors(&set.all(), &[gt]);
    println!("ground truth {gt:?}: {} positive anchors", m.num_positive());
    let (a, t) = m.targets[0];
    let anchor = set.all()[a];
    println!("  anchor {anchor:?} -> deltas {t:.3?} -> {:?}", decode(&anchor, &encode(&anchor, &gt)));

    let scored = |x: f64, score: f64| Detection {
        bbox: HotspotBox { x1: x, y1: 52.0, x2: x + 69.0, y2: 121.0, class_id: 1, score },
        level: 3,
    };
    let dets = [scored(40.0, 0.9), scored(44.0, 0.8), scored(80.0, 0.7), scored(150.0, 0.6), scored(152.0, 0.02)];
    let kept = nms(&dets, 0.5, 0.05);
    for d in &kept {
        println!("kept x1 {:.0} score {:.2}", d.bbox.x1, d.bbox.score);
    }
    println!("iou(first, third) = {:.3}", iou(&dets[0].bbox.coords(), &dets[2].bbox.coords()));
    Ok(())
}
