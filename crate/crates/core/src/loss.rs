//! Reconstruction, WGAN-GP adversarial and combined training losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::Points;
use crate::net::critic::check_dim;
use crate::net::Critic;
use crate::tensor::{l2_distance_f64, DenseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_i: f64,
    pub lambda_p: f64,
    pub lambda_a: f64,
    /// Gradient-penalty weight; 10 is the usual WGAN-GP choice.
    pub lambda_gp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_i: 0.01,
            lambda_p: 0.1,
            lambda_a: 0.01,
            lambda_gp: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_i", self.lambda_i),
            ("lambda_p", self.lambda_p),
            ("lambda_a", self.lambda_a),
            ("lambda_gp", self.lambda_gp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub rec: f64,
    pub adv: f64,
    pub ilid: f64,
    pub plid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub rec: f64,
    pub adv: f64,
    pub ilid: f64,
    pub plid: f64,
}

impl LossReport {
    /// Relative deviation of `total` from the weighted sum of its parts.
    pub fn decomposition_error(&self, w: &LossWeights) -> f64 {
        let expected = w.lambda_i * self.ilid + w.lambda_p * self.plid + w.lambda_a * self.adv + self.rec;
        (self.total - expected).abs() / expected.abs().max(f64::MIN_POSITIVE)
    }
}

/// `lambda_I * ilid + lambda_P * plid + lambda_A * adv + rec`.
pub fn total_loss(parts: LossParts, w: &LossWeights) -> Result<LossReport> {
    for (name, v) in [
        ("rec", parts.rec),
        ("adv", parts.adv),
        ("ilid", parts.ilid),
        ("plid", parts.plid),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(name));
        }
    }
    Ok(LossReport {
        total: w.lambda_i * parts.ilid + w.lambda_p * parts.plid + w.lambda_a * parts.adv + parts.rec,
        rec: parts.rec,
        adv: parts.adv,
        ilid: parts.ilid,
        plid: parts.plid,
    })
}

/// `||x_hat - y||_2` over all elements.
pub fn rec_loss(x_hat: &DenseTensor, y: &DenseTensor) -> Result<f64> {
    x_hat.l2_distance(y)
}

fn check_batches(a: &Points, b: &Points) -> Result<()> {
    if a.dim() != b.dim() || a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "batches of {}x{} and {}x{}",
            a.len(),
            a.dim(),
            b.len(),
            b.dim()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    Ok(())
}

/// Batch mean of per-sample L2 norms; rows are samples.
pub fn batch_rec_loss(x_hat: &Points, y: &Points) -> Result<f64> {
    check_batches(x_hat, y)?;
    let sum: f64 = x_hat.rows().zip(y.rows()).map(|(a, b)| l2_distance_f64(a, b)).sum();
    Ok(sum / x_hat.len() as f64)
}

/// [`batch_rec_loss`] and its gradient with respect to `x_hat`.
pub fn batch_rec_loss_gradient(x_hat: &Points, y: &Points) -> Result<(f64, Points)> {
    let value = batch_rec_loss(x_hat, y)?;
    let n = x_hat.len() as f64;
    let mut grad = Vec::with_capacity(x_hat.as_flat().len());
    for (a, b) in x_hat.rows().zip(y.rows()) {
        let d = l2_distance_f64(a, b);
        // Zero at the minimum: the norm's subgradient set contains 0 there.
        let scale = if d > 0.0 { 1.0 / (n * d) } else { 0.0 };
        grad.extend(a.iter().zip(b).map(|(p, q)| scale * (p - q)));
    }
    Ok((value, Points::new(x_hat.dim(), grad)?))
}

fn mean_score(critic: &dyn Critic, batch: &Points) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("critic batch".into()));
    }
    let mut sum = 0.0;
    for x in batch.rows() {
        check_dim(critic, x)?;
        sum += critic.score(x);
    }
    Ok(sum / batch.len() as f64)
}

/// Critic objective with its pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    /// `wasserstein + lambda_gp * penalty`
    pub total: f64,
    /// `E[D(fake)] - E[D(real)]`
    pub wasserstein: f64,
    /// `E[(||grad D(x_hat)|| - 1)^2]`, unweighted.
    pub penalty: f64,
    pub grad_norms: Vec<f64>,
}

pub fn adv_critic_loss(
    critic: &dyn Critic,
    real: &Points,
    fake: &Points,
    x_hat: &Points,
    lambda_gp: f64,
) -> Result<CriticLoss> {
    let wasserstein = mean_score(critic, fake)? - mean_score(critic, real)?;
    if x_hat.is_empty() {
        return Err(Error::Empty("gradient-penalty batch".into()));
    }
    let mut grad_norms = Vec::with_capacity(x_hat.len());
    for x in x_hat.rows() {
        check_dim(critic, x)?;
        let g = critic.input_gradient(x);
        grad_norms.push(g.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    let penalty = grad_norms.iter().map(|n| (n - 1.0).powi(2)).sum::<f64>() / grad_norms.len() as f64;
    Ok(CriticLoss {
        total: wasserstein + lambda_gp * penalty,
        wasserstein,
        penalty,
        grad_norms,
    })
}

/// `-E[D(fake)]`
pub fn adv_generator_loss(critic: &dyn Critic, fake: &Points) -> Result<f64> {
    Ok(-mean_score(critic, fake)?)
}

/// Where the gradient penalty is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyPoints {
    /// The mask composite `t x + (1 - t) G(x)`.
    #[default]
    Composite,
    /// Uniform random interpolates between real and generated samples.
    Interpolate,
}

pub fn penalty_points(
    mode: PenaltyPoints,
    real: &Points,
    fake: &Points,
    composites: &Points,
    rng: &mut impl Rng,
) -> Result<Points> {
    match mode {
        PenaltyPoints::Composite => Ok(composites.clone()),
        PenaltyPoints::Interpolate => {
            check_batches(real, fake)?;
            let mut out = Points::with_dim(real.dim());
            for (r, f) in real.rows().zip(fake.rows()) {
                let e: f64 = rng.gen();
                let row: Vec<f64> = r.iter().zip(f).map(|(a, b)| e * a + (1.0 - e) * b).collect();
                out.push(&row)?;
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ConstantCritic, LinearCritic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pts(rows: &[&[f64]]) -> Points {
        Points::from_rows(rows).unwrap()
    }

    fn random(rng: &mut impl Rng, n: usize, d: usize) -> Points {
        Points::new(d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn rec_examples() {
        let a = DenseTensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        let z = DenseTensor::zeros(vec![2]).unwrap();
        assert_eq!(rec_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(rec_loss(&a, &z).unwrap(), 5.0);
        assert!(rec_loss(&a, &DenseTensor::zeros(vec![3]).unwrap()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 4, 7);
        let y = random(&mut rng, 4, 7);
        let mut oracle = 0.0;
        for i in 0..4 {
            let mut s = 0.0;
            for j in 0..7 {
                s += (x.row(i)[j] - y.row(i)[j]).powi(2);
            }
            oracle += s.sqrt();
        }
        assert!((batch_rec_loss(&x, &y).unwrap() - oracle / 4.0).abs() < 1e-12);
    }

    #[test]
    fn rec_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 3, 4);
        let y = random(&mut rng, 3, 4);
        let (_, g) = batch_rec_loss_gradient(&x, &y).unwrap();
        for i in 0..x.as_flat().len() {
            let mut p = x.as_flat().to_vec();
            let mut m = p.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (batch_rec_loss(&Points::new(4, p).unwrap(), &y).unwrap()
                - batch_rec_loss(&Points::new(4, m).unwrap(), &y).unwrap())
                / 2e-6;
            assert!((fd - g.as_flat()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn gradient_penalty_linear_critics() {
        let real = pts(&[&[1.0, 2.0, 3.0], &[0.0, -1.0, 0.5]]);
        let fake = pts(&[&[0.5, 0.5, 0.5], &[2.0, 0.0, -1.0]]);
        let unit = LinearCritic { w: vec![0.0, 1.0, 0.0], b: 0.2 };
        let l = adv_critic_loss(&unit, &real, &fake, &fake, 10.0).unwrap();
        assert_eq!(l.penalty, 0.0);
        assert_eq!(l.total, l.wasserstein);

        let three = LinearCritic { w: vec![3.0, 0.0, 0.0], b: 0.0 };
        let l = adv_critic_loss(&three, &real, &fake, &fake, 10.0).unwrap();
        assert_eq!(10.0 * l.penalty, 40.0);
        assert_eq!(l.grad_norms, vec![3.0, 3.0]);

        let constant = ConstantCritic { dim: 3, value: 4.2 };
        let l = adv_critic_loss(&constant, &real, &fake, &fake, 10.0).unwrap();
        assert_eq!(l.wasserstein, 0.0);
        assert_eq!(l.total, 10.0);
    }

    #[test]
    fn generator_loss_examples() {
        let fake = pts(&[&[1.0, 2.0], &[0.0, 1.0], &[-1.0, 3.0], &[2.0, 2.0]]);
        let c = ConstantCritic { dim: 2, value: 1.5 };
        assert_eq!(adv_generator_loss(&c, &fake).unwrap(), -1.5);
        let lin = LinearCritic { w: vec![0.5, -1.0], b: 0.25 };
        let single = pts(&[&[1.0, 2.0]]);
        assert_eq!(adv_generator_loss(&lin, &single).unwrap(), -lin.score(&[1.0, 2.0]));
        // Dot products: -1.25, -0.75, -3.25, -0.75 → mean -1.5
        assert_eq!(adv_generator_loss(&lin, &fake).unwrap(), 1.5);
        assert!(adv_generator_loss(&lin, &pts(&[&[1.0, 2.0, 3.0]])).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let parts = LossParts { ilid: 2.0, plid: 3.0, adv: 4.0, rec: 5.0 };
        let r = total_loss(parts, &LossWeights::default()).unwrap();
        assert!((r.total - 5.36).abs() < 1e-12);
        assert!(r.decomposition_error(&LossWeights::default()) < 1e-12);

        let zero = LossWeights { lambda_i: 0.0, lambda_p: 0.0, lambda_a: 0.0, lambda_gp: 0.0 };
        assert_eq!(total_loss(parts, &zero).unwrap().total, 5.0);

        let ablation = LossWeights { lambda_i: 0.0, lambda_p: 0.0, ..LossWeights::default() };
        assert_eq!(total_loss(parts, &ablation).unwrap().total, 5.0 + 0.01 * 4.0);

        let bad = LossParts { plid: f64::NAN, ..parts };
        assert!(matches!(total_loss(bad, &zero), Err(Error::NonFiniteLoss("plid"))));
    }

    #[test]
    fn interpolated_penalty_points_lie_between() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let real = pts(&[&[0.0, 0.0]]);
        let fake = pts(&[&[2.0, 4.0]]);
        let p = penalty_points(PenaltyPoints::Interpolate, &real, &fake, &fake, &mut rng).unwrap();
        let row = p.row(0);
        assert!((row[1] - 2.0 * row[0]).abs() < 1e-12 && (0.0..=2.0).contains(&row[0]));
        let c = penalty_points(PenaltyPoints::Composite, &real, &fake, &real, &mut rng).unwrap();
        assert_eq!(c, real);
    }
}
