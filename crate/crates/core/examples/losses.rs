//! The three loss terms on small fixtures.

use lithohod::loss::{diou, focal, smooth_l1, total_loss, DiouDenominator, LossConfig};

fn main() {
    let cfg = LossConfig::default();
    println!("focal (alpha {}, gamma {})", cfg.alpha, cfg.gamma);
    for p in [0.1, 0.5, 0.9] {
        println!("  p {p}: positive {:.4}  negative {:.4}", focal(p, true, cfg.alpha, cfg.gamma), focal(p, false, cfg.alpha, cfg.gamma));
    }
    for d in [0.25, 1.0, 3.0] {
        let (v, g) = smooth_l1(d);
        println!("smooth-l1({d}) = {v:.4}, slope {g}");
    }
    let g = [0.0, 0.0, 2.0, 2.0];
    for b in [[0.0, 0.0, 2.0, 2.0], [0.5, 0.5, 1.5, 1.5], [3.0, 0.0, 5.0, 2.0]] {
        let (sq, _) = diou(&b, &g, DiouDenominator::Squared);
        let (lit, _) = diou(&b, &g, DiouDenominator::Literal);
        println!("diou {b:?}: squared {sq:.4}, literal {lit:.4}");
    }
    println!("total(1, 2, 3) with lambda {} = {}", cfg.lambda, total_loss(1.0, 2.0, 3.0, cfg.lambda));
}
