//! Fuses a deformation feature with a pyramid level and inspects the
//! attention weights of the three branches.

use lithohod::model::cmf::Cmf;
use lithohod::tensor::{Array, Graph, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let cmf = Cmf::new(&mut store, 4, 32, 16, 32, &mut rng);
    let d = Normal::new(0.0, 1.0).unwrap();
    let de = Array::from_fn(&[1, 3, 8, 8], |_| d.sample(&mut rng));
    let py = Array::from_fn(&[1, 32, 8, 8], |_| d.sample(&mut rng));

    let g = Graph::<f64>::inference();
    let (out, w) = cmf.forward(&g, &store, g.input(de.clone(), false), g.input(py.clone(), false));
    let hw = 64;
    for (name, a) in [("sa_de", w.de.as_ref().unwrap()), ("sa_py", &w.py), ("cross", w.cross.as_ref().unwrap())] {
        let worst = (0..hw)
            .map(|j| ((0..hw).map(|i| a.data()[i * hw + j]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        let peak = a.data().iter().cloned().fold(0.0, f64::max);
        println!("{name}: max |column sum - 1| = {worst:.2e}, largest weight {peak:.3}");
    }
    let delta: f64 = g.value(out).data().iter().zip(py.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / py.len() as f64;
    println!("mean |fused - P4| = {delta:.4}");

    // xi = 0 removes the deformation mask
    store.value_mut(cmf.cross.xi).data_mut()[0] = 0.0;
    let g = Graph::<f64>::inference();
    let (out, _) = cmf.forward(&g, &store, g.input(de, false), g.input(py.clone(), false));
    let (enh, _) = cmf.sa_py.forward(&g, &store, g.input(py, false));
    println!("xi = 0 gives the enhanced pyramid: {}", g.value(out).data() == g.value(enh).data());
}
