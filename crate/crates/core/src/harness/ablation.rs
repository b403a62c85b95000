//! Grid over the two regularizer weights, scored by restoration quality.

use serde::Serialize;

use super::config::ExperimentConfig;
use super::inpaint::{mean_quality, prepare_inputs, quality, run_inpaint_direct};
use crate::error::{Error, Result};
use crate::loss::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationRow {
    pub lambda_i: f64,
    pub lambda_p: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// One direct-inpainting run per `(lambda_I, lambda_P)` cell on the same
/// images and masks; rows follow the grid in row-major order.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let grid = &cfg.ablation;
    if grid.lambda_i.is_empty() || grid.lambda_p.is_empty() {
        return Err(Error::Config("ablation grid needs at least one value per axis".into()));
    }
    let (images, masks) = prepare_inputs(cfg)?;
    let mut rows = Vec::new();
    for &lambda_i in &grid.lambda_i {
        for &lambda_p in &grid.lambda_p {
            let weights = LossWeights {
                lambda_i,
                lambda_p,
                ..cfg.weights
            };
            let out = run_inpaint_direct(cfg, &weights, &images, &masks)?;
            let q = mean_quality(&quality(&images, &out.restored)?);
            log::info!("lambda_i={lambda_i} lambda_p={lambda_p}: psnr {} ssim {}", q.psnr, q.ssim);
            rows.push(AblationRow {
                lambda_i,
                lambda_p,
                psnr: q.psnr,
                ssim: q.ssim,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape_and_determinism() {
        let mut cfg = ExperimentConfig::default();
        cfg.inpaint.size = 16;
        cfg.inpaint.steps = 5;
        let a = run_ablation(&cfg).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!((a[1].lambda_i, a[1].lambda_p), (0.0, 0.1));
        assert_eq!((a[2].lambda_i, a[2].lambda_p), (0.01, 0.0));
        assert_eq!(a, run_ablation(&cfg).unwrap());
        cfg.ablation.lambda_p.clear();
        assert!(run_ablation(&cfg).is_err());
    }
}
