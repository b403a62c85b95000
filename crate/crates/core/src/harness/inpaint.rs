//! Direct inpainting: the missing pixels themselves are the free variables,
//! optimized against the combined loss without a generator or critic.

use rand::Rng;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::textures::{stream_rng, textures};
use crate::error::{Error, Result};
use crate::feature::{
    extract_patches, extract_region_patches, random_mask, scatter_patch_gradients, FeatureMap, Mask,
    PatchSet, Rect, Transform,
};
use crate::io::load_image;
use crate::knn::Points;
use crate::lid::{ilid_loss_gradient_with, plid_loss, plid_loss_gradient_with, TiePolicy};
use crate::loss::{batch_rec_loss_gradient, total_loss, LossParts, LossReport, LossWeights};
use crate::metrics::{evaluate, MetricReport};
use crate::net::Array;

pub const MIN_EXTENT: usize = 16;
const MASK_STREAM: u8 = 5;
const INIT_STREAM: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Accepted step size; 0 for the initial evaluation.
    pub lr: f64,
    pub total: f64,
    pub rec: f64,
    pub adv: f64,
    pub ilid: f64,
    pub plid: f64,
}

impl StepRecord {
    fn new(step: usize, lr: f64, r: LossReport) -> Self {
        Self {
            step,
            lr,
            total: r.total,
            rec: r.rec,
            adv: r.adv,
            ilid: r.ilid,
            plid: r.plid,
        }
    }

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

#[derive(Debug, Clone)]
pub struct InpaintOutcome {
    pub restored: Vec<Array>,
    pub trajectory: Vec<StepRecord>,
}

/// `[N, H, W, C]` from equally shaped `[H, W, C]` images.
pub fn stack(images: &[Array]) -> Result<Array> {
    let first = images.first().ok_or_else(|| Error::Empty("image batch".into()))?;
    let mut data = Vec::with_capacity(first.len() * images.len());
    for img in images {
        if img.shape != first.shape || img.shape.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "cannot batch {:?} with {:?}",
                img.shape, first.shape
            )));
        }
        data.extend_from_slice(&img.data);
    }
    let mut shape = vec![images.len()];
    shape.extend_from_slice(&first.shape);
    Array::new(shape, data)
}

pub fn unstack(batch: &Array) -> Vec<Array> {
    let shape = batch.shape[1..].to_vec();
    let per: usize = shape.iter().product();
    batch
        .data
        .chunks(per)
        .map(|c| Array::new(shape.clone(), c.to_vec()).expect("chunk matches shape"))
        .collect()
}

pub(super) fn rows(batch: &Array) -> Result<Points> {
    let per = batch.len() / batch.shape[0];
    Points::new(per, batch.data.clone())
}

pub(super) fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::ZeroDistance { .. }
            | Error::DegenerateNeighborhood { .. }
            | Error::NonDifferentiable { .. }
            | Error::NonFiniteLoss(_)
    )
}

/// Images and masks for an inpainting run: files from `inpaint.inputs`, or
/// generated textures, with a fixed or per-image random hole.
pub fn prepare_inputs(cfg: &ExperimentConfig) -> Result<(Vec<Array>, Vec<Mask>)> {
    let c = &cfg.inpaint;
    let images = if c.inputs.is_empty() {
        textures(cfg.seed, c.images, c.texture, c.size, c.channels)
    } else {
        c.inputs
            .iter()
            .map(|p| load_image(p).map(|t| Array::from_tensor(&t)))
            .collect::<Result<Vec<_>>>()?
    };
    let masks = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let (h, w) = (img.shape[0], img.shape[1]);
            match c.mask {
                Some([top, left, height, width]) => Mask::from_rect(
                    h,
                    w,
                    Rect {
                        top,
                        left,
                        height,
                        width,
                    },
                ),
                None => random_mask(stream_rng(cfg.seed, MASK_STREAM, i as u64).gen(), h, w),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((images, masks))
}

fn feature_map(batch_features: &Array, i: usize, source: (usize, usize), id: &str) -> Result<FeatureMap> {
    let shape = batch_features.shape[1..].to_vec();
    let per: usize = shape.iter().product();
    let values = Array::new(shape, batch_features.data[i * per..(i + 1) * per].to_vec())?;
    FeatureMap::new(values, source, id.to_string())
}

/// Reconstruction and LID terms of a restored batch against fixed
/// originals, with the gradient of their weighted sum.
pub(super) struct Objective<'a> {
    transform: &'a Transform,
    weights: LossWeights,
    k_i: usize,
    k_p: usize,
    masks: &'a [Mask],
    originals: Points,
    y_feats: Points,
    /// Reference patch sets of the masked images, in image order.
    p_sets: Vec<PatchSet>,
    masked: Vec<usize>,
    source: (usize, usize),
    pub(super) ties: TiePolicy,
}

impl<'a> Objective<'a> {
    pub(super) fn new(
        transform: &'a Transform,
        cfg: &ExperimentConfig,
        weights: LossWeights,
        y: &Array,
        masks: &'a [Mask],
    ) -> Result<Self> {
        let (n, h, w) = (y.shape[0], y.shape[1], y.shape[2]);
        let (_, fy) = transform.apply_batch(y)?;
        let id = transform.spec().id();
        let masked: Vec<usize> = (0..n).filter(|&i| masks[i].bbox().is_some()).collect();
        let mut p_sets = Vec::new();
        for &i in &masked {
            let fm = feature_map(&fy, i, (h, w), &id)?;
            let q = extract_region_patches(&fm, &masks[i])?;
            if q.len() < cfg.k_p {
                return Err(Error::RegionTooSmall(format!(
                    "image {i}: the restored region yields {} patches, fewer than k_p = {}",
                    q.len(),
                    cfg.k_p
                )));
            }
            p_sets.push(extract_patches(&fm)?);
        }
        if weights.lambda_i > 0.0 && n < cfg.k_i {
            return Err(Error::Config(format!(
                "iLID needs at least k_i = {} images per batch, got {n}; add images or set weights.lambda_i = 0",
                cfg.k_i
            )));
        }
        Ok(Self {
            transform,
            weights,
            k_i: cfg.k_i,
            k_p: cfg.k_p,
            masks,
            originals: rows(y)?,
            y_feats: rows(&fy)?,
            p_sets,
            masked,
            source: (h, w),
            ties: TiePolicy::Report,
        })
    }

    fn region_sets(&self, features: &Array) -> Result<Vec<PatchSet>> {
        let id = self.transform.spec().id();
        self.masked
            .iter()
            .map(|&i| extract_region_patches(&feature_map(features, i, self.source, &id)?, &self.masks[i]))
            .collect()
    }

    /// Unweighted parts (adversarial left at 0) and the gradient of
    /// `rec + lambda_I * ilid + lambda_P * plid` with respect to `x`.
    pub(super) fn parts(&self, x: &Array) -> Result<(LossParts, Array)> {
        let (rec, rec_grad) = batch_rec_loss_gradient(&rows(x)?, &self.originals)?;
        let mut grad = Array::new(x.shape.clone(), rec_grad.as_flat().to_vec())?;
        let mut parts = LossParts {
            rec,
            ..LossParts::default()
        };
        let w = self.weights;
        if w.lambda_i > 0.0 || (w.lambda_p > 0.0 && !self.masked.is_empty()) {
            let (tape, f) = self.transform.apply_batch(x)?;
            let mut fgrad = Array::zeros(f.shape.clone());
            if w.lambda_i > 0.0 {
                let (v, gz) = ilid_loss_gradient_with(&self.y_feats, &rows(&f)?, self.k_i, self.ties)?;
                parts.ilid = v;
                for (a, g) in fgrad.data.iter_mut().zip(gz.as_flat()) {
                    *a += w.lambda_i * g;
                }
            }
            if w.lambda_p > 0.0 && !self.masked.is_empty() {
                let q_sets = self.region_sets(&f)?;
                let (v, gq) = plid_loss_gradient_with(&self.p_sets, &q_sets, self.k_p, self.ties)?;
                parts.plid = v;
                let shape = (f.shape[1], f.shape[2], f.shape[3]);
                let per = shape.0 * shape.1 * shape.2;
                for ((&i, q), g) in self.masked.iter().zip(&q_sets).zip(&gq) {
                    let scattered = scatter_patch_gradients(shape, q, g)?;
                    for (a, s) in fgrad.data[i * per..(i + 1) * per].iter_mut().zip(&scattered.data) {
                        *a += w.lambda_p * s;
                    }
                }
            }
            let pgrad = self.transform.backward(&tape, &fgrad)?;
            for (a, g) in grad.data.iter_mut().zip(&pgrad.data) {
                *a += g;
            }
        }
        Ok((parts, grad))
    }

    fn evaluate(&self, x: &Array) -> Result<(LossReport, Array)> {
        let (parts, grad) = self.parts(x)?;
        Ok((total_loss(parts, &self.weights)?, grad))
    }
}

/// Flat indices of missing pixels (all channels) in the `[N, H, W, C]` batch.
fn free_indices(shape: &[usize], masks: &[Mask]) -> Vec<usize> {
    let (h, w, c) = (shape[1], shape[2], shape[3]);
    let mut out = Vec::new();
    for (i, m) in masks.iter().enumerate() {
        for r in 0..h {
            for col in 0..w {
                if m.is_missing(r, col) {
                    let base = ((i * h + r) * w + col) * c;
                    out.extend(base..base + c);
                }
            }
        }
    }
    out
}

fn check_inputs(images: &[Array], masks: &[Mask]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Empty("no images to inpaint".into()));
    }
    if images.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!("{} images but {} masks", images.len(), masks.len())));
    }
    for (img, m) in images.iter().zip(masks) {
        if img.shape.len() != 3 {
            return Err(Error::ShapeMismatch(format!("expected HxWxC image, got {:?}", img.shape)));
        }
        if img.shape[0] < MIN_EXTENT || img.shape[1] < MIN_EXTENT {
            return Err(Error::ImageTooSmall(format!(
                "{}x{} image; direct inpainting needs at least {MIN_EXTENT}x{MIN_EXTENT}",
                img.shape[0], img.shape[1]
            )));
        }
        if (m.height(), m.width()) != (img.shape[0], img.shape[1]) {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} for image {:?}",
                m.height(),
                m.width(),
                img.shape
            )));
        }
    }
    Ok(())
}

/// Gradient descent on `lambda_I * ilid + lambda_P * plid + rec` over the
/// missing pixels, which start as seeded uniform noise. Each step tries the
/// configured learning rate and halves it until the total loss does not
/// increase; steps whose loss cannot be evaluated (coincident or tied
/// neighbors) count as rejected. The run stops early when no step is accepted.
pub fn run_inpaint_direct(
    cfg: &ExperimentConfig,
    weights: &LossWeights,
    images: &[Array],
    masks: &[Mask],
) -> Result<InpaintOutcome> {
    check_inputs(images, masks)?;
    weights.validate()?;
    // The adversarial term needs a critic, which this harness does not train.
    let weights = LossWeights {
        lambda_a: 0.0,
        ..*weights
    };
    let y = stack(images)?;
    let free = free_indices(&y.shape, masks);
    if free.is_empty() {
        return Ok(InpaintOutcome {
            restored: images.to_vec(),
            trajectory: Vec::new(),
        });
    }
    let transform = Transform::new(&cfg.transform, y.shape[3])?;
    let objective = Objective::new(&transform, cfg, weights, &y, masks)?;

    let mut x = y.clone();
    let mut rng = stream_rng(cfg.seed, INIT_STREAM, 0);
    for &i in &free {
        x.data[i] = rng.gen();
    }
    let c = &cfg.inpaint;
    let (mut report, mut grad) = objective.evaluate(&x)?;
    let mut trajectory = vec![StepRecord::new(0, 0.0, report)];
    for step in 1..=c.steps {
        let mut lr = c.lr;
        let mut accepted = None;
        for _ in 0..=c.max_halvings {
            let mut trial = x.clone();
            for &i in &free {
                trial.data[i] -= lr * grad.data[i];
            }
            match objective.evaluate(&trial) {
                Ok((r, g)) if c.max_halvings == 0 || r.total <= report.total => {
                    accepted = Some((trial, r, g));
                    break;
                }
                Ok(_) => {}
                Err(e) if recoverable(&e) && c.max_halvings > 0 => {
                    log::debug!("step {step}: rejected lr {lr}: {e}");
                }
                Err(e) => return Err(e),
            }
            lr *= 0.5;
        }
        let Some((trial, r, g)) = accepted else {
            log::info!("stopping after {} steps: no descent step found", step - 1);
            break;
        };
        x = trial;
        report = r;
        grad = g;
        trajectory.push(StepRecord::new(step, lr, report));
    }
    Ok(InpaintOutcome {
        restored: unstack(&x),
        trajectory,
    })
}

/// Mean pLID of each original's full patch set against the restored-region
/// patches of its restoration.
pub fn region_plid(
    cfg: &ExperimentConfig,
    originals: &[Array],
    restored: &[Array],
    masks: &[Mask],
) -> Result<f64> {
    check_inputs(originals, masks)?;
    let y = stack(originals)?;
    let x = stack(restored)?;
    let transform = Transform::new(&cfg.transform, y.shape[3])?;
    let (_, fy) = transform.apply_batch(&y)?;
    let (_, fx) = transform.apply_batch(&x)?;
    let id = transform.spec().id();
    let source = (y.shape[1], y.shape[2]);
    let mut p_sets = Vec::new();
    let mut q_sets = Vec::new();
    for (i, m) in masks.iter().enumerate() {
        if m.bbox().is_none() {
            continue;
        }
        p_sets.push(extract_patches(&feature_map(&fy, i, source, &id)?)?);
        q_sets.push(extract_region_patches(&feature_map(&fx, i, source, &id)?, m)?);
    }
    plid_loss(&p_sets, &q_sets, cfg.k_p)
}

/// Per-image PSNR and SSIM of the restorations.
pub fn quality(originals: &[Array], restored: &[Array]) -> Result<Vec<MetricReport>> {
    originals
        .iter()
        .zip(restored)
        .map(|(a, b)| evaluate(&b.to_tensor()?, &a.to_tensor()?))
        .collect()
}

/// Averages over images; an infinite PSNR stays infinite.
pub fn mean_quality(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len() as f64;
    MetricReport {
        psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
    }
}
