//! Minimal reverse-mode autodiff and the toy networks used for training.

mod array;
pub mod checkpoint;
pub mod critic;
mod graph;
pub mod models;

pub use array::Array;
pub use checkpoint::{load_params, save_params};
pub use critic::{ConstantCritic, Critic, LinearCritic, MlpCritic, TrainableCritic};
pub(crate) use graph::check_same_layout;
pub use graph::{Activation, Gradients, Graph, NodeId, ParamStore};

use rand::Rng;

use crate::error::{Error, Result};

/// Uniform initialization in `[-s, s]` with `s = 1 / sqrt(fan_in)`.
pub fn init_uniform(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize) -> Array {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Array {
        shape,
        data: (0..n).map(|_| rng.gen_range(-s..=s)).collect(),
    }
}

/// `p <- p - lr * g` for every named parameter.
pub fn sgd_step(params: &ParamStore, grads: &ParamStore, lr: f64) -> Result<ParamStore> {
    check_same_layout(params, grads)?;
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be nonnegative, got {lr}")));
    }
    Ok(params
        .iter()
        .map(|(name, p)| {
            let g = &grads[name];
            let data = p.data.iter().zip(&g.data).map(|(pv, gv)| pv - lr * gv).collect();
            (
                name.clone(),
                Array {
                    shape: p.shape.clone(),
                    data,
                },
            )
        })
        .collect())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.values_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn store(pairs: &[(&str, Array)]) -> ParamStore {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn inputs(pairs: &[(&str, Array)]) -> BTreeMap<String, Array> {
        store(pairs)
    }

    #[test]
    fn sgd_examples() {
        let p = store(&[("p", Array::scalar(1.0))]);
        let g = store(&[("p", Array::scalar(2.0))]);
        assert_eq!(sgd_step(&p, &g, 0.5).unwrap()["p"].data, vec![0.0]);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
        let wrong = store(&[("q", Array::scalar(2.0))]);
        assert!(matches!(sgd_step(&p, &wrong, 0.1), Err(Error::ParamMismatch(_))));
    }

    #[test]
    fn sgd_on_quadratic_bowl() {
        // f(p) = 0.5 * a * p^2 converges monotonically for lr < 1 / a.
        let a = 4.0;
        let mut p = store(&[("p", Array::scalar(3.0))]);
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let x = p["p"].data[0];
            let f = 0.5 * a * x * x;
            assert!(f < last);
            last = f;
            let g = store(&[("p", Array::scalar(a * x))]);
            p = sgd_step(&p, &g, 0.2).unwrap();
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn identity_affine_passes_input_through() {
        let mut g = Graph::new();
        let x = g.input("x", vec![2, 3]).unwrap();
        let mut eye = Array::zeros(vec![3, 3]);
        for i in 0..3 {
            eye.data[i * 3 + i] = 1.0;
        }
        let w = g.param("w", eye).unwrap();
        let b = g.param("b", Array::zeros(vec![3])).unwrap();
        let y = g.affine(x, w, b).unwrap();
        g.mark_output("y", y).unwrap();
        let xv = Array::new(vec![2, 3], vec![1., -2., 3., 0.5, 0., -7.]).unwrap();
        let out = g.forward(&inputs(&[("x", xv.clone())])).unwrap();
        assert_eq!(out["y"], xv);
    }

    #[test]
    fn stacked_relu_is_idempotent() {
        let build = |twice: bool| {
            let mut g = Graph::new();
            let x = g.input("x", vec![5]).unwrap();
            let mut y = g.act(x, Activation::Relu).unwrap();
            if twice {
                y = g.act(y, Activation::Relu).unwrap();
            }
            g.mark_output("y", y).unwrap();
            g
        };
        let xv = Array::new(vec![5], vec![-1., 0., 2., -0.5, 3.]).unwrap();
        let a = build(false).forward(&inputs(&[("x", xv.clone())])).unwrap();
        let b = build(true).forward(&inputs(&[("x", xv)])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_map_input_gradient_is_weight() {
        let mut g = Graph::new();
        let x = g.input("x", vec![1, 3]).unwrap();
        let w = g.param("w", Array::new(vec![1, 3], vec![0.5, -1., 2.]).unwrap()).unwrap();
        let b = g.param("b", Array::zeros(vec![1])).unwrap();
        let y = g.affine(x, w, b).unwrap();
        g.mark_output("y", y).unwrap();
        assert!(matches!(
            g.backward("y", &Array::zeros(vec![1, 1])),
            Err(Error::BackwardBeforeForward)
        ));
        g.forward(&inputs(&[("x", Array::new(vec![1, 3], vec![3., 1., 4.]).unwrap())]))
            .unwrap();
        let grads = g.backward("y", &Array::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(grads.inputs["x"].data, vec![0.5, -1., 2.]);
        assert_eq!(grads.params["w"].data, vec![3., 1., 4.]);

        let zero = g.backward("y", &Array::zeros(vec![1, 1])).unwrap();
        assert!(zero.inputs["x"].data.iter().all(|&v| v == 0.0));
        assert!(zero.params.values().all(|a| a.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn construction_errors_name_the_node() {
        let mut g = Graph::new();
        let x = g.input("x", vec![2, 3]).unwrap();
        let w = g.param("w", Array::zeros(vec![4, 5])).unwrap();
        let b = g.param("b", Array::zeros(vec![4])).unwrap();
        let err = g.affine(x, w, b).unwrap_err();
        assert!(matches!(err, Error::Graph { node: 3, op: "affine", .. }), "{err}");
        assert!(g.reshape(x, vec![5]).is_err());
        assert!(g.input("x", vec![1]).is_err());

        let y = g.act(x, Activation::Tanh).unwrap();
        g.mark_output("y", y).unwrap();
        let bad = Array::zeros(vec![3, 2]);
        assert!(matches!(
            g.forward(&inputs(&[("x", bad)])),
            Err(Error::Graph { node: 0, .. })
        ));
        assert!(matches!(g.forward(&BTreeMap::new()), Err(Error::UnboundInput(_))));
    }

    /// Three-layer MLP checked against hand-written matrix loops.
    #[test]
    fn mlp_matches_scripted_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dims = [4usize, 5, 3, 2];
        let mut g = Graph::new();
        let mut h = g.input("x", vec![2, 4]).unwrap();
        let mut layers = Vec::new();
        for l in 0..3 {
            let w = init_uniform(&mut rng, vec![dims[l + 1], dims[l]], dims[l]);
            let b = init_uniform(&mut rng, vec![dims[l + 1]], dims[l]);
            let wn = g.param(&format!("w{l}"), w.clone()).unwrap();
            let bn = g.param(&format!("b{l}"), b.clone()).unwrap();
            h = g.affine(h, wn, bn).unwrap();
            if l < 2 {
                h = g.act(h, Activation::Tanh).unwrap();
            }
            layers.push((w, b));
        }
        g.mark_output("y", h).unwrap();
        let x = init_uniform(&mut rng, vec![2, 4], 1);
        let out = g.forward(&inputs(&[("x", x.clone())])).unwrap();

        for r in 0..2 {
            let mut v: Vec<f64> = x.data[r * 4..(r + 1) * 4].to_vec();
            for (l, (w, b)) in layers.iter().enumerate() {
                let (o, i) = (w.shape[0], w.shape[1]);
                let mut next = vec![0.0; o];
                for a in 0..o {
                    let mut acc = b.data[a];
                    for c in 0..i {
                        acc += w.data[a * i + c] * v[c];
                    }
                    next[a] = if l < 2 { acc.tanh() } else { acc };
                }
                v = next;
            }
            for (a, e) in out["y"].data[r * 2..(r + 1) * 2].iter().zip(&v) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }
}
