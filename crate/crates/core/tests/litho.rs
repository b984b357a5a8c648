//! Proxy simulator behaviour on generated clips.

use lithohod::layout::{generate_layout, GenSpec, LayoutClip};
use lithohod::litho::{deformation_map, simulate, warp, LithoParams};

fn clips(n: u64) -> Vec<LayoutClip> {
    (0..n)
        .map(|seed| generate_layout(&GenSpec { height: 128, width: 128, seed: 100 + seed, ..GenSpec::default() }).unwrap())
        .collect()
}

#[test]
fn warped_layout_agrees_with_resist() {
    let mut worst: f64 = 1.0;
    for clip in clips(20) {
        let r = simulate(&clip, &LithoParams::default()).unwrap();
        let map = deformation_map(&clip.raster, &r.resist).unwrap();
        let warped = warp(&clip.raster, &map).unwrap();
        worst = worst.min(warped.agreement(&r.resist));
    }
    assert!(worst >= 0.95, "worst agreement {worst}");
}

#[test]
fn wider_blur_never_shrinks_mean_deformation() {
    let fixtures = clips(6);
    let mean = |sigma: f64| {
        let p = LithoParams { blur_sigma_px: sigma, ..LithoParams::default() };
        fixtures.iter().map(|c| simulate(c, &p).unwrap().deformation.mean_magnitude()).sum::<f64>() / fixtures.len() as f64
    };
    let sigmas = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0];
    let means: Vec<f64> = sigmas.iter().map(|&s| mean(s)).collect();
    for w in means.windows(2) {
        assert!(w[1] >= w[0], "{means:?}");
    }
}

#[test]
fn simulation_is_deterministic() {
    let clip = &clips(1)[0];
    let a = simulate(clip, &LithoParams::default()).unwrap();
    let b = simulate(clip, &LithoParams::default()).unwrap();
    assert_eq!(a.resist, b.resist);
    assert!(a.aerial.data().iter().zip(b.aerial.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.deformation, b.deformation);
}
