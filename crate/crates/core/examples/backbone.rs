//! Prints the pyramid shapes and channel gates of the detector for a few
//! backbone depths.

use lithohod::config::RunConfig;
use lithohod::model::Detector;
use lithohod::tensor::{Array, Graph, ParamStore};

fn main() -> lithohod::Result<()> {
    for (depth, base, size) in [(18, 16, 128), (50, 16, 256)] {
        let mut cfg = RunConfig::default();
        cfg.model.depth = depth;
        cfg.model.base_width = base;
        cfg.model.fpn_channels = 32;
        cfg.model.input_size = size;
        cfg.model.norm_groups = 8;
        let mut store = ParamStore::<f32>::new();
        let det = Detector::new(&cfg.model, &cfg.anchors, &mut store, 0)?;
        let g = Graph::<f32>::inference();
        let x = g.input(Array::from_fn(&[1, 1, size, size], |i| ((i / 7) % 2) as f32), false);
        let f = det.forward(&g, &store, x, &Array::zeros(&[1, 3, size, size]))?;
        println!("depth {depth}, input {size}, {} parameters", store.numel());
        for l in 0..3 {
            println!("  C{} {:?}  P{} {:?}", l + 3, g.shape(f.c[l]), l + 3, g.shape(f.p[l]));
        }
        let gates = g.value(f.gates.expect("channel attention on"));
        let (lo, hi) = gates.data().iter().fold((1f32, 0f32), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        println!("  channel gates in [{lo:.3}, {hi:.3}]");
    }
    Ok(())
}
