//! Critics whose input-gradient norm has closed-form parameter derivatives.
//!
//! Training against the gradient penalty needs `d/dtheta ||grad_x D(x)||`,
//! which a first-order tape cannot provide. The critics here are shallow
//! enough that it can be written out by hand.

use rand::Rng;

use super::{init_uniform, Array, ParamStore};
use crate::error::{Error, Result};

pub trait Critic {
    fn input_dim(&self) -> usize;
    fn score(&self, x: &[f64]) -> f64;
    fn input_gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// A critic that can report parameter gradients of its score and of the
/// gradient-penalty summand `(||grad_x D(x)|| - 1)^2`.
pub trait TrainableCritic: Critic {
    fn params(&self) -> ParamStore;
    fn set_params(&mut self, params: &ParamStore) -> Result<()>;
    /// Adds `weight * dD(x)/dtheta` into `grads`.
    fn add_score_grad(&self, x: &[f64], weight: f64, grads: &mut ParamStore);
    /// Adds `weight * d(||grad_x D(x)|| - 1)^2/dtheta` into `grads`.
    fn add_penalty_grad(&self, x: &[f64], weight: f64, grads: &mut ParamStore);

    fn zero_grads(&self) -> ParamStore {
        self.params()
            .into_iter()
            .map(|(k, v)| (k, Array::zeros(v.shape)))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `D(x) = c`.
#[derive(Debug, Clone)]
pub struct ConstantCritic {
    pub dim: usize,
    pub value: f64,
}

impl Critic for ConstantCritic {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn score(&self, _x: &[f64]) -> f64 {
        self.value
    }
    fn input_gradient(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }
}

/// `D(x) = w . x + b`.
#[derive(Debug, Clone)]
pub struct LinearCritic {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Critic for LinearCritic {
    fn input_dim(&self) -> usize {
        self.w.len()
    }
    fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }
    fn input_gradient(&self, _x: &[f64]) -> Vec<f64> {
        self.w.clone()
    }
}

impl TrainableCritic for LinearCritic {
    fn params(&self) -> ParamStore {
        ParamStore::from([
            ("d.b".to_string(), Array::scalar(self.b)),
            ("d.w".to_string(), Array::new(vec![self.w.len()], self.w.clone()).unwrap()),
        ])
    }

    fn set_params(&mut self, params: &ParamStore) -> Result<()> {
        super::check_same_layout(&self.params(), params)?;
        self.w = params["d.w"].data.clone();
        self.b = params["d.b"].data[0];
        Ok(())
    }

    fn add_score_grad(&self, x: &[f64], weight: f64, grads: &mut ParamStore) {
        for (g, xi) in grads.get_mut("d.w").unwrap().data.iter_mut().zip(x) {
            *g += weight * xi;
        }
        grads.get_mut("d.b").unwrap().data[0] += weight;
    }

    fn add_penalty_grad(&self, _x: &[f64], weight: f64, grads: &mut ParamStore) {
        let n = norm(&self.w);
        if n == 0.0 {
            return;
        }
        let scale = weight * 2.0 * (n - 1.0) / n;
        for (g, wi) in grads.get_mut("d.w").unwrap().data.iter_mut().zip(&self.w) {
            *g += scale * wi;
        }
    }
}

/// `D(x) = v . tanh(W x + b) + c` with one hidden layer.
#[derive(Debug, Clone)]
pub struct MlpCritic {
    dim: usize,
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    v: Vec<f64>,
    c: f64,
}

struct Hidden {
    h: Vec<f64>,
    /// `tanh'(a) = 1 - h^2`
    d1: Vec<f64>,
}

impl MlpCritic {
    pub fn new(rng: &mut impl Rng, dim: usize, hidden: usize) -> Self {
        let w1 = init_uniform(rng, vec![hidden, dim], dim).data;
        let b1 = init_uniform(rng, vec![hidden], dim).data;
        let v = init_uniform(rng, vec![hidden], hidden).data;
        Self {
            dim,
            hidden,
            w1,
            b1,
            v,
            c: 0.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.w1[j * self.dim..(j + 1) * self.dim]
    }

    fn hidden_layer(&self, x: &[f64]) -> Hidden {
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| (dot(self.row(j), x) + self.b1[j]).tanh())
            .collect();
        let d1 = h.iter().map(|hj| 1.0 - hj * hj).collect();
        Hidden { h, d1 }
    }

    fn gradient_from(&self, hid: &Hidden) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for j in 0..self.hidden {
            let u = self.v[j] * hid.d1[j];
            for (gi, wi) in g.iter_mut().zip(self.row(j)) {
                *gi += u * wi;
            }
        }
        g
    }
}

impl Critic for MlpCritic {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64]) -> f64 {
        dot(&self.v, &self.hidden_layer(x).h) + self.c
    }

    fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.gradient_from(&self.hidden_layer(x))
    }
}

impl TrainableCritic for MlpCritic {
    fn params(&self) -> ParamStore {
        ParamStore::from([
            ("d.b1".to_string(), Array::new(vec![self.hidden], self.b1.clone()).unwrap()),
            ("d.c".to_string(), Array::scalar(self.c)),
            ("d.v".to_string(), Array::new(vec![self.hidden], self.v.clone()).unwrap()),
            (
                "d.w1".to_string(),
                Array::new(vec![self.hidden, self.dim], self.w1.clone()).unwrap(),
            ),
        ])
    }

    fn set_params(&mut self, params: &ParamStore) -> Result<()> {
        super::check_same_layout(&self.params(), params)?;
        self.w1 = params["d.w1"].data.clone();
        self.b1 = params["d.b1"].data.clone();
        self.v = params["d.v"].data.clone();
        self.c = params["d.c"].data[0];
        Ok(())
    }

    fn add_score_grad(&self, x: &[f64], weight: f64, grads: &mut ParamStore) {
        let hid = self.hidden_layer(x);
        for j in 0..self.hidden {
            let u = weight * self.v[j] * hid.d1[j];
            grads.get_mut("d.v").unwrap().data[j] += weight * hid.h[j];
            grads.get_mut("d.b1").unwrap().data[j] += u;
            let gw = &mut grads.get_mut("d.w1").unwrap().data[j * self.dim..(j + 1) * self.dim];
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += u * xi;
            }
        }
        grads.get_mut("d.c").unwrap().data[0] += weight;
    }

    fn add_penalty_grad(&self, x: &[f64], weight: f64, grads: &mut ParamStore) {
        // With g = W^T u, u = v * tanh'(a) and P = (|g| - 1)^2, let
        // q = dP/dg = 2 (|g| - 1) g / |g| and s = W q. Then
        //   dP/dW = u q^T + (s * v * tanh''(a)) x^T
        //   dP/db = s * v * tanh''(a)
        //   dP/dv = s * tanh'(a)
        let hid = self.hidden_layer(x);
        let g = self.gradient_from(&hid);
        let n = norm(&g);
        if n == 0.0 {
            return;
        }
        let scale = 2.0 * (n - 1.0) / n;
        let q: Vec<f64> = g.iter().map(|gi| scale * gi).collect();
        for j in 0..self.hidden {
            let s = dot(self.row(j), &q);
            let d2 = -2.0 * hid.h[j] * hid.d1[j];
            let u = self.v[j] * hid.d1[j];
            let inner = s * self.v[j] * d2;
            grads.get_mut("d.v").unwrap().data[j] += weight * s * hid.d1[j];
            grads.get_mut("d.b1").unwrap().data[j] += weight * inner;
            let gw = &mut grads.get_mut("d.w1").unwrap().data[j * self.dim..(j + 1) * self.dim];
            for ((gwi, qi), xi) in gw.iter_mut().zip(&q).zip(x) {
                *gwi += weight * (u * qi + inner * xi);
            }
        }
    }
}

pub(crate) fn check_dim(critic: &dyn Critic, x: &[f64]) -> Result<()> {
    if x.len() != critic.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: critic.input_dim(),
            found: x.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn penalty(c: &dyn Critic, x: &[f64]) -> f64 {
        (norm(&c.input_gradient(x)) - 1.0).powi(2)
    }

    fn check_param_grads<C: TrainableCritic + Clone>(critic: &C, x: &[f64]) {
        let h = 1e-5;
        let mut score_g = critic.zero_grads();
        critic.add_score_grad(x, 1.0, &mut score_g);
        let mut pen_g = critic.zero_grads();
        critic.add_penalty_grad(x, 1.0, &mut pen_g);
        let base = critic.params();
        for (name, value) in &base {
            for i in 0..value.len() {
                let eval = |delta: f64| {
                    let mut p = base.clone();
                    p.get_mut(name).unwrap().data[i] += delta;
                    let mut c = critic.clone();
                    c.set_params(&p).unwrap();
                    (c.score(x), penalty(&c, x))
                };
                let (sp, pp) = eval(h);
                let (sm, pm) = eval(-h);
                let fd_s = (sp - sm) / (2.0 * h);
                let fd_p = (pp - pm) / (2.0 * h);
                assert!((fd_s - score_g[name].data[i]).abs() < 1e-6 * (1.0 + fd_s.abs()), "{name}[{i}]");
                assert!((fd_p - pen_g[name].data[i]).abs() < 1e-6 * (1.0 + fd_p.abs()), "{name}[{i}] {fd_p} vs {}", pen_g[name].data[i]);
            }
        }
    }

    #[test]
    fn mlp_input_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = MlpCritic::new(&mut rng, 5, 4);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = c.input_gradient(&x);
        for i in 0..5 {
            let mut p = x.clone();
            let mut m = x.clone();
            p[i] += 1e-5;
            m[i] -= 1e-5;
            let fd = (c.score(&p) - c.score(&m)) / 2e-5;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn closed_form_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let mut c = MlpCritic::new(&mut rng, 4, 3);
            // Larger weights so the penalty is far from its minimum.
            let mut p = c.params();
            for v in &mut p.get_mut("d.w1").unwrap().data {
                *v *= 3.0;
            }
            c.set_params(&p).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            check_param_grads(&c, &x);
        }
        let lin = LinearCritic { w: vec![0.5, -2.0, 1.0], b: 0.3 };
        check_param_grads(&lin, &[0.1, 0.2, -0.7]);
    }
}
