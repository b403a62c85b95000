//! Synthetic checks of the estimator: dimension recovery on uniform balls
//! and growth of iLID as a cluster drifts away from the reference point.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::textures::stream_rng;
use crate::error::{Error, Result};
use crate::knn::{neighbors, Points};
use crate::lid::{ilid, lid_mle};

const BALL_STREAM: u8 = 2;
const QUERY_STREAM: u8 = 3;
const CLUSTER_STREAM: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimRow {
    pub dim: usize,
    pub mean: f64,
    pub stderr: f64,
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftPoint {
    pub d: f64,
    pub mean_ilid: f64,
    pub stderr: f64,
}

fn uniform_ball(rng: &mut impl Rng, dim: usize, radius: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
    g.into_iter().map(|v| v * r / norm).collect()
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Estimates LID at `queries` points inside the unit ball of each dimension,
/// against `n` uniform samples from that ball.
pub fn run_dimension_recovery(cfg: &ExperimentConfig) -> Result<Vec<DimRow>> {
    let c = &cfg.dim_recovery;
    if c.dims.is_empty() || c.dims.contains(&0) || c.queries == 0 {
        return Err(Error::Config("dim_recovery needs positive dims and queries".into()));
    }
    if !(c.query_radius > 0.0 && c.query_radius <= 1.0) {
        return Err(Error::Config(format!(
            "dim_recovery.query_radius must lie in (0, 1], got {}",
            c.query_radius
        )));
    }
    c.dims
        .iter()
        .map(|&dim| {
            let mut rng = stream_rng(cfg.seed, BALL_STREAM, dim as u64);
            let mut data = Points::with_dim(dim);
            for _ in 0..c.n {
                data.push(&uniform_ball(&mut rng, dim, 1.0))?;
            }
            let mut rng = stream_rng(cfg.seed, QUERY_STREAM, dim as u64);
            let queries: Vec<Vec<f64>> = (0..c.queries)
                .map(|_| uniform_ball(&mut rng, dim, c.query_radius))
                .collect();
            let estimates = queries
                .par_iter()
                .map(|q| Ok(lid_mle(neighbors(q, &data, c.k, false)?)?.value))
                .collect::<Result<Vec<f64>>>()?;
            let (mean, stderr) = mean_stderr(&estimates);
            log::info!("dim {dim}: mean LID {mean:.3} +- {stderr:.3}");
            Ok(DimRow {
                dim,
                mean,
                stderr,
                k: c.k,
                n: c.n,
            })
        })
        .collect()
}

/// Mean iLID of the origin against 2-D Gaussian clusters centred at
/// `(offset + d, 0)`, for `steps` evenly spaced `d` in `[0, d_max]`. The same
/// cluster draws are reused at every `d`.
pub fn drift_curve(cfg: &ExperimentConfig) -> Result<Vec<DriftPoint>> {
    let c = &cfg.drift;
    if c.steps < 2 || c.clusters == 0 || !(c.d_max > 0.0) || !(c.sigma > 0.0) {
        return Err(Error::Config(
            "drift needs steps >= 2, clusters > 0, d_max > 0 and sigma > 0".into(),
        ));
    }
    let clusters: Vec<Vec<[f64; 2]>> = (0..c.clusters as u64)
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, CLUSTER_STREAM, i);
            (0..c.points)
                .map(|_| {
                    [
                        c.sigma * rng.sample::<f64, _>(StandardNormal),
                        c.sigma * rng.sample::<f64, _>(StandardNormal),
                    ]
                })
                .collect()
        })
        .collect();
    let y = [0.0, 0.0];
    (0..c.steps)
        .map(|s| {
            let d = c.d_max * s as f64 / (c.steps - 1) as f64;
            let values = clusters
                .iter()
                .map(|pts| {
                    let shifted: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] + c.offset + d, p[1]]).collect();
                    Ok(ilid(&y, &Points::from_rows(&shifted)?, c.k)?.value)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean_ilid, stderr) = mean_stderr(&values);
            Ok(DriftPoint { d, mean_ilid, stderr })
        })
        .collect()
}

pub fn check_strictly_increasing(curve: &[DriftPoint]) -> Result<()> {
    for w in curve.windows(2) {
        if !(w[1].mean_ilid > w[0].mean_ilid) {
            return Err(Error::Check(format!(
                "drift curve is not increasing: iLID {} at d={} then {} at d={}",
                w[0].mean_ilid, w[0].d, w[1].mean_ilid, w[1].d
            )));
        }
    }
    Ok(())
}

/// [`drift_curve`] followed by the monotonicity check.
pub fn run_drift_demo(cfg: &ExperimentConfig) -> Result<Vec<DriftPoint>> {
    let curve = drift_curve(cfg)?;
    check_strictly_increasing(&curve)?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dim_cfg(k: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.dim_recovery.dims = vec![1, 2];
        cfg.dim_recovery.n = 3000;
        cfg.dim_recovery.k = k;
        cfg
    }

    #[test]
    fn dimension_rows() {
        let rows = run_dimension_recovery(&small_dim_cfg(50)).unwrap();
        assert_eq!(rows.len(), 2);
        assert!((0.8..=1.2).contains(&rows[0].mean), "{rows:?}");
        assert!((1.6..=2.4).contains(&rows[1].mean), "{rows:?}");
    }

    #[test]
    fn larger_k_shrinks_stderr() {
        let a = run_dimension_recovery(&small_dim_cfg(20)).unwrap();
        let b = run_dimension_recovery(&small_dim_cfg(100)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(y.stderr < x.stderr, "{x:?} vs {y:?}");
        }
    }

    #[test]
    fn ball_samples_inside() {
        let mut rng = stream_rng(0, 0, 0);
        for dim in [1, 3, 8] {
            for _ in 0..200 {
                let p = uniform_ball(&mut rng, dim, 0.5);
                assert!(p.iter().map(|v| v * v).sum::<f64>() <= 0.25 + 1e-12);
            }
        }
    }

    #[test]
    fn drift_grows() {
        let curve = run_drift_demo(&ExperimentConfig::default()).unwrap();
        assert_eq!(curve.len(), 20);
        assert_eq!(curve[0].d, 0.0);
        assert_eq!(curve[19].d, 4.0);
        let at3 = curve.iter().find(|p| p.d >= 3.0).unwrap();
        assert!(at3.mean_ilid > curve[0].mean_ilid);
    }

    #[test]
    fn monotone_check_reports() {
        let p = |d, v| DriftPoint {
            d,
            mean_ilid: v,
            stderr: 0.0,
        };
        assert!(check_strictly_increasing(&[p(0.0, 1.0), p(1.0, 2.0)]).is_ok());
        assert!(matches!(
            check_strictly_increasing(&[p(0.0, 1.0), p(1.0, 1.0)]),
            Err(Error::Check(_))
        ));
    }

    #[test]
    fn mean_stderr_values() {
        assert_eq!(mean_stderr(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
