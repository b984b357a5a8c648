// SPDX-License-Identifier: Apache-2.0

//! Minimal reverse-mode tensor engine: NCHW arrays, a define-by-run tape,
//! and the handful of ops the detector needs.

mod array;
mod attention;
mod conv;
mod graph;
mod norm;
mod ops;
mod params;

pub use array::{matmul, Array, Float, Mat};
pub use attention::attention_weights;
pub use graph::{Gradients, Graph, Var};
pub use ops::sigmoid;
pub use params::{Adam, ParamId, ParamStore};

#[cfg(test)]
mod gradient_tests {
    use super::*;

    /// Checks every op's backward against central differences on a random
    /// weighted-sum reduction.
    fn check<F>(inputs: Vec<Array<f64>>, f: F)
    where
        F: Fn(&Graph<f64>, &[Var]) -> Var,
    {
        let g = Graph::<f64>::new();
        let vars: Vec<Var> = inputs.iter().map(|a| g.input(a.clone(), true)).collect();
        let out = f(&g, &vars);
        let shape = g.shape(out);
        let weights = Array::from_fn(&shape, |i| ((i * 7919 % 97) as f64 / 97.0) - 0.4);
        let grads = g.backward(&[(out, weights.clone())]);
        let eval = |inp: &[Array<f64>]| {
            let g = Graph::<f64>::inference();
            let vars: Vec<Var> = inp.iter().map(|a| g.constant(a.clone())).collect();
            let o = f(&g, &vars);
            g.value(o).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for (vi, var) in vars.iter().enumerate() {
            let analytic = grads.wrt(*var).expect("missing gradient");
            for idx in 0..inputs[vi].len() {
                let mut plus = inputs.clone();
                plus[vi].data_mut()[idx] += h;
                let mut minus = inputs.clone();
                minus[vi].data_mut()[idx] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = analytic.data()[idx];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                assert!(err < 1e-5, "input {vi}[{idx}]: fd {fd} vs analytic {an}");
            }
        }
    }

    fn rand_arr(shape: &[usize], seed: usize) -> Array<f64> {
        Array::from_fn(shape, |i| {
            let v = ((i + 1) * 2654435761usize.wrapping_add(seed * 97)) % 1000;
            v as f64 / 500.0 - 1.0
        })
    }

    #[test]
    fn conv_gradients() {
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
            check(
                vec![rand_arr(&[2, 2, 5, 6], 1), rand_arr(&[3, 2, k, k], 2), rand_arr(&[3], 3)],
                |g, v| g.conv2d(v[0], v[1], Some(v[2]), s, p),
            );
        }
    }

    #[test]
    fn group_norm_gradients() {
        check(
            vec![rand_arr(&[2, 4, 3, 3], 4), rand_arr(&[4], 5), rand_arr(&[4], 6)],
            |g, v| g.group_norm(v[0], v[1], v[2], 2, 1e-5),
        );
    }

    #[test]
    fn attention_gradients() {
        check(
            vec![rand_arr(&[2, 3, 2, 3], 7), rand_arr(&[2, 3, 2, 3], 8), rand_arr(&[2, 4, 2, 3], 9)],
            |g, v| g.attention(v[0], v[1], v[2]).0,
        );
    }

    #[test]
    fn pooling_and_elementwise_gradients() {
        check(vec![rand_arr(&[1, 2, 5, 5], 10)], |g, v| g.max_pool2d(v[0], 3, 2, 1));
        check(vec![rand_arr(&[2, 3, 2, 2], 11)], |g, v| g.upsample2x(v[0]));
        check(vec![rand_arr(&[2, 3, 3, 2], 12)], |g, v| {
            let a = g.global_avg_pool(v[0]);
            let m = g.global_max_pool(v[0]);
            g.add(a, m)
        });
        check(vec![rand_arr(&[2, 3], 13), rand_arr(&[4, 3], 14), rand_arr(&[4], 15)], |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]));
            g.sigmoid(y)
        });
        check(vec![rand_arr(&[2, 3, 2, 2], 16), rand_arr(&[2, 3], 17)], |g, v| g.scale_channels(v[0], v[1]));
        check(vec![rand_arr(&[2, 3, 2, 2], 18), rand_arr(&[1], 19)], |g, v| {
            let y = g.scale_by(v[0], v[1]);
            g.relu(y)
        });
    }
}
