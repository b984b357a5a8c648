//! Generates a layout, cuts clips, labels hotspots and writes the first clip
//! as a PNG.
//!
//! cargo run --release --example layout_synth -- [out_dir]

use std::path::PathBuf;

use lithohod::io::write_bitmap_png;
use lithohod::layout::{class_name, clip_dataset, generate_layout, hotspot_oracle, ClipMode, GenSpec, OracleRules};
use lithohod::litho::{simulate, LithoParams};

fn main() -> lithohod::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "layout_synth_out".into()));
    std::fs::create_dir_all(&out)?;
    let layout = generate_layout(&GenSpec { height: 1024, width: 1024, seed: 3, ..GenSpec::default() })?;
    println!("layout {}: {} rectangles, density {:.3}", layout.id, layout.polygons.len(), layout.raster.fill_fraction());

    let clips = clip_dataset(&layout, ClipMode::Tiling, 256, 0, 0)?;
    let rules = OracleRules::default();
    let mut total = [0usize; 2];
    for clip in &clips {
        let resist = simulate(clip, &LithoParams::default())?.resist;
        for b in hotspot_oracle(clip, &resist, &rules) {
            total[b.class_id as usize] += 1;
        }
    }
    println!("{} clips, {} {} / {} {} boxes", clips.len(), total[0], class_name(0), total[1], class_name(1));

    let first = &clips[0];
    let resist = simulate(first, &LithoParams::default())?.resist;
    for b in hotspot_oracle(first, &resist, &rules) {
        println!("  {} [{:.0}, {:.0}, {:.0}, {:.0}]", class_name(b.class_id), b.x1, b.y1, b.x2, b.y2);
    }
    write_bitmap_png(&out.join("clip.png"), &first.raster)?;
    write_bitmap_png(&out.join("resist.png"), &resist)?;
    println!("wrote {}", out.display());
    Ok(())
}
