//! Runs the proxy simulator on one clip and checks that warping the layout
//! with its deformation map reproduces the resist.

use lithohod::layout::{generate_layout, GenSpec};
use lithohod::litho::{pool_deformation, warp, LithoParams, Simulator};

fn main() -> lithohod::Result<()> {
    let clip = generate_layout(&GenSpec { height: 256, width: 256, seed: 11, ..GenSpec::default() })?;
    for sigma in [1.0, 2.5, 4.0] {
        let sim = Simulator::new(LithoParams { blur_sigma_px: sigma, ..LithoParams::default() })?;
        let r = sim.simulate(&clip)?;
        let warped = warp(&clip.raster, &r.deformation)?;
        println!(
            "sigma {sigma:.1}: printed {:.3} of drawn, mean |d| {:.3} px, capped {}, warp agreement {:.4}",
            r.resist.count_ones() as f64 / clip.raster.count_ones().max(1) as f64,
            r.deformation.mean_magnitude(),
            r.deformation.capped,
            warped.agreement(&r.resist),
        );
    }
    let r = Simulator::default().simulate(&clip)?;
    for side in [32, 16, 8] {
        let p = pool_deformation(&r.deformation, side, side)?;
        println!("pooled to {side}x{side}: mean |d| {:.4}", p.magnitude.mean());
    }
    Ok(())
}
