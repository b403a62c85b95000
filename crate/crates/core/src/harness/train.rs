//! Toy generator/critic training on small images with the full combined loss.
//!
//! Parameters are rounded to `f32` after every update, so a checkpoint
//! written as `.dt` holds exactly the training state. Batches, masks and
//! penalty draws depend only on `(seed, step)`; a resumed run therefore
//! reproduces the original from the checkpointed step onward.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::inpaint::{mean_quality, quality, rows, stack, unstack, Objective};
use super::textures::{load_dataset, stream_rng, textures};
use crate::error::{Error, Result};
use crate::feature::{random_mask, Mask, Transform};
use crate::lid::TiePolicy;
use crate::loss::{adv_critic_loss, adv_generator_loss, penalty_points, total_loss, LossReport};
use crate::net::models::{generator, ConvNet};
use crate::net::{clip_grad_norm, load_params, save_params, sgd_step, Array, Critic, MlpCritic, ParamStore, TrainableCritic};

const BATCH_STREAM: u8 = 7;
const EVAL_STREAM: u8 = 8;
const CRITIC_STREAM: u8 = 9;
const PENALTY_STREAM: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainRecord {
    pub step: usize,
    pub total: f64,
    pub rec: f64,
    pub adv: f64,
    pub ilid: f64,
    pub plid: f64,
    pub critic_loss: f64,
    pub penalty: f64,
}

impl TrainRecord {
    pub fn report(&self) -> LossReport {
        LossReport {
            total: self.total,
            rec: self.rec,
            adv: self.adv,
            ilid: self.ilid,
            plid: self.plid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalRecord {
    pub epoch: usize,
    /// Updates completed when the evaluation ran.
    pub step: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub losses: Vec<TrainRecord>,
    pub evals: Vec<EvalRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub params: ParamStore,
}

fn rounded(mut p: ParamStore) -> ParamStore {
    p.values_mut().for_each(Array::round_to_f32);
    p
}

/// Training images from `train.dataset` or generated textures.
pub fn training_images(cfg: &ExperimentConfig) -> Result<Vec<Array>> {
    let t = &cfg.train;
    match &t.dataset {
        Some(dir) => load_dataset(dir),
        None => Ok(textures(cfg.seed, t.images, t.texture, t.size, t.channels)),
    }
}

struct Models {
    gen: ConvNet,
    critic: MlpCritic,
}

impl Models {
    fn params(&self) -> ParamStore {
        let mut p = self.gen.params().clone();
        p.extend(self.critic.params());
        p
    }

    fn set_params(&mut self, all: ParamStore) -> Result<()> {
        let (critic, gen): (ParamStore, ParamStore) = all.into_iter().partition(|(k, _)| k.starts_with("d."));
        self.gen.set_params(gen)?;
        self.critic.set_params(&critic)
    }
}

/// Amplitude of the noise added to the hole fill.
const FILL_NOISE: f64 = 0.05;

/// Input to the generator, `[N, H, W, C + 1]`: known pixels, the hole filled
/// with the per-channel mean of the known pixels plus seeded uniform noise,
/// and the mask as an extra channel. Without the noise the generator's output
/// is constant deep inside the hole, and the resulting duplicate patches tie
/// at the LID neighborhood boundary.
fn generator_input(y: &Array, masks: &[Mask], rng: &mut impl Rng) -> Result<Array> {
    let (n, h, w, c) = (y.shape[0], y.shape[1], y.shape[2], y.shape[3]);
    let mut data = Vec::with_capacity(n * h * w * (c + 1));
    for (i, m) in masks.iter().enumerate() {
        let t = m.tensor().data();
        let image = &y.data[i * h * w * c..(i + 1) * h * w * c];
        let mut mean = vec![0.0; c];
        let known = t.iter().filter(|&&v| v != 0.0).count().max(1) as f64;
        for (p, px) in image.chunks(c).enumerate() {
            if t[p] != 0.0 {
                mean.iter_mut().zip(px).for_each(|(a, v)| *a += v / known);
            }
        }
        for (p, px) in image.chunks(c).enumerate() {
            if t[p] == 0.0 {
                data.extend(mean.iter().map(|m| m + rng.gen_range(-FILL_NOISE..FILL_NOISE)));
            } else {
                data.extend_from_slice(px);
            }
            data.push(f64::from(t[p]));
        }
    }
    Array::new(vec![n, h, w, c + 1], data)
}

/// `t * y + (1 - t) * g` per image.
fn composite_batch(y: &Array, g: &Array, masks: &[Mask]) -> Array {
    let (h, w, c) = (y.shape[1], y.shape[2], y.shape[3]);
    let mut out = y.clone();
    for (i, m) in masks.iter().enumerate() {
        let t = m.tensor().data();
        for p in 0..h * w {
            if t[p] == 0.0 {
                let base = (i * h * w + p) * c;
                out.data[base..base + c].copy_from_slice(&g.data[base..base + c]);
            }
        }
    }
    out
}

/// PSNR and SSIM of composited generator outputs on the held-out images,
/// each with a fixed seeded mask.
fn evaluate_holdout(gen: &ConvNet, held: &[Array], seed: u64) -> Result<(f64, f64)> {
    let y = stack(held)?;
    let mut rng = stream_rng(seed, EVAL_STREAM, 0);
    let masks = (0..held.len())
        .map(|_| random_mask(rng.gen(), y.shape[1], y.shape[2]))
        .collect::<Result<Vec<_>>>()?;
    let g = gen.forward(&generator_input(&y, &masks, &mut rng)?)?;
    let restored = unstack(&composite_batch(&y, &g, &masks));
    let m = mean_quality(&quality(held, &restored)?);
    Ok((m.psnr, m.ssim))
}

/// Trains the toy generator and critic. Checkpoints and nothing else are
/// written under `out/checkpoints` when `out` is given.
pub fn run_train_toy(cfg: &ExperimentConfig, images: &[Array], out: Option<&Path>) -> Result<TrainOutcome> {
    let t = &cfg.train;
    if images.is_empty() {
        return Err(Error::Empty("training dataset has no images".into()));
    }
    if !(0.0..1.0).contains(&t.holdout) {
        return Err(Error::Config(format!("train.holdout must lie in [0, 1), got {}", t.holdout)));
    }
    let held_count = ((images.len() as f64 * t.holdout).floor() as usize).min(images.len() - 1);
    let (train, held) = images.split_at(images.len() - held_count);
    let shape = train[0].shape.clone();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let batch = cfg.batch.min(train.len());
    if batch < cfg.batch {
        log::info!("batch reduced to the {} training images", train.len());
    }
    let epoch_len = train.len().div_ceil(batch);

    let transform = Transform::new(&cfg.transform, c)?;
    let mut models = Models {
        gen: generator(c, t.width, cfg.seed),
        critic: MlpCritic::new(&mut stream_rng(cfg.seed, CRITIC_STREAM, 0), h * w * c, t.critic_hidden),
    };
    let mut start = 0;
    match &t.resume {
        Some(dir) => {
            let (params, extra) = load_params(dir)?;
            models.set_params(params)?;
            start = extra
                .get("step")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: checkpoint has no step", dir.display())))?;
            log::info!("resuming from {} at step {start}", dir.display());
        }
        None => {
            let p = rounded(models.params());
            models.set_params(p)?;
        }
    }

    let mut outcome = TrainOutcome {
        losses: Vec::new(),
        evals: Vec::new(),
        checkpoints: Vec::new(),
        params: ParamStore::new(),
    };
    let save = |models: &Models, step: usize, outcome: &mut TrainOutcome| -> Result<()> {
        if let Some(out) = out {
            let dir = out.join("checkpoints").join(format!("step-{step:06}"));
            let extra = [("step".to_string(), step.to_string())].into_iter().collect();
            save_params(&dir, &models.params(), &extra)?;
            outcome.checkpoints.push(dir);
        }
        Ok(())
    };
    if start == 0 && !held.is_empty() {
        let (psnr, ssim) = evaluate_holdout(&models.gen, held, cfg.seed)?;
        outcome.evals.push(EvalRecord {
            epoch: 0,
            step: 0,
            psnr,
            ssim,
        });
    }

    for step in start..t.steps {
        let mut rng = stream_rng(cfg.seed, BATCH_STREAM, step as u64);
        let picked: Vec<Array> = sample(&mut rng, train.len(), batch)
            .into_iter()
            .map(|i| train[i].clone())
            .collect();
        let masks: Vec<Mask> = (0..batch)
            .map(|_| random_mask(rng.gen(), h, w))
            .collect::<Result<_>>()?;
        let y = stack(&picked)?;
        let (graph, g) = models.gen.run(&generator_input(&y, &masks, &mut rng)?)?;
        let x_hat = composite_batch(&y, &g, &masks);

        let mut objective = Objective::new(&transform, cfg, cfg.weights, &y, &masks)?;
        // Generated hole patches start tightly clustered, so boundary ties
        // within the tolerance turn up by chance across many queries.
        objective.ties = TiePolicy::BreakByIndex;
        let (mut parts, mut grad) = objective.parts(&x_hat)?;
        let fake = rows(&x_hat)?;
        parts.adv = adv_generator_loss(&models.critic, &fake)?;
        let report = total_loss(parts, &cfg.weights)?;
        let scale = cfg.weights.lambda_a / batch as f64;
        for (i, x) in fake.rows().enumerate() {
            let dx = models.critic.input_gradient(x);
            for (a, d) in grad.data[i * fake.dim()..(i + 1) * fake.dim()].iter_mut().zip(dx) {
                *a -= scale * d;
            }
        }
        // Known pixels come from the input, so only hole pixels reach G.
        let per_image = h * w;
        for (i, m) in masks.iter().enumerate() {
            let tm = m.tensor().data();
            for p in 0..per_image {
                if tm[p] != 0.0 {
                    let base = (i * per_image + p) * c;
                    grad.data[base..base + c].fill(0.0);
                }
            }
        }
        let mut gen_grads = graph.backward("y", &grad)?.params;
        if t.grad_clip > 0.0 {
            clip_grad_norm(&mut gen_grads, t.grad_clip);
        }
        let new_gen = rounded(sgd_step(models.gen.params(), &gen_grads, t.lr)?);

        let real = rows(&y)?;
        let mut prng = stream_rng(cfg.seed, PENALTY_STREAM, step as u64);
        let gp_points = penalty_points(t.penalty_points, &real, &fake, &fake, &mut prng)?;
        let closs = adv_critic_loss(&models.critic, &real, &fake, &gp_points, cfg.weights.lambda_gp)?;
        let mut cgrads = models.critic.zero_grads();
        let inv = 1.0 / batch as f64;
        for x in fake.rows() {
            models.critic.add_score_grad(x, inv, &mut cgrads);
        }
        for x in real.rows() {
            models.critic.add_score_grad(x, -inv, &mut cgrads);
        }
        let gp_weight = cfg.weights.lambda_gp / gp_points.len() as f64;
        for x in gp_points.rows() {
            models.critic.add_penalty_grad(x, gp_weight, &mut cgrads);
        }
        let new_critic = rounded(sgd_step(&models.critic.params(), &cgrads, t.critic_lr)?);

        outcome.losses.push(TrainRecord {
            step,
            total: report.total,
            rec: report.rec,
            adv: report.adv,
            ilid: report.ilid,
            plid: report.plid,
            critic_loss: closs.total,
            penalty: closs.penalty,
        });
        log::debug!("step {step}: {report:?}");
        models.gen.set_params(new_gen)?;
        models.critic.set_params(&new_critic)?;

        let done = step + 1;
        if done % epoch_len == 0 && !held.is_empty() {
            let (psnr, ssim) = evaluate_holdout(&models.gen, held, cfg.seed)?;
            outcome.evals.push(EvalRecord {
                epoch: done / epoch_len,
                step: done,
                psnr,
                ssim,
            });
        }
        if t.checkpoint_every > 0 && done % t.checkpoint_every == 0 && done != t.steps {
            save(&models, done, &mut outcome)?;
        }
    }
    save(&models, t.steps.max(start), &mut outcome)?;
    outcome.params = models.params();
    Ok(outcome)
}
