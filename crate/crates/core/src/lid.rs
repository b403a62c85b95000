//! Maximum-likelihood LID estimation and the image-/patch-level alignment
//! scores built on it.
//!
//! For neighbor distances `r_1 <= ... <= r_k` the estimate is
//!
//! ```text
//! LID = -( (1/k) * sum_i ln(r_i / r_k) )^-1
//! ```
//!
//! with `r_k` standing in for the neighborhood radius, so the last summand is
//! always zero and `k >= 2` is required.
//!
//! Gradients treat neighbor membership and ranks as fixed for the current
//! evaluation. With `S = sum_i ln(r_i / r_k)`:
//!
//! ```text
//! dLID/dr_j = (k / S^2) / r_j              for j < k
//! dLID/dr_k = -(k / S^2) * (k - 1) / r_k
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature::PatchSet;
use crate::knn::{neighbors, NeighborList, Points};

/// Distances closer than this at the neighborhood boundary make the
/// frozen-neighborhood gradient ill-defined.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// What gradient routines do when the neighborhood boundary is tied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    /// Fail with [`Error::NonDifferentiable`].
    #[default]
    Report,
    /// Keep the index tie-break order of the neighbor search and return that
    /// one-sided derivative.
    BreakByIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidEstimate {
    pub value: f64,
    pub k: usize,
    pub neighbors: NeighborList,
}

/// `S = sum_i ln(r_i / r_max)`, validated.
fn log_ratio_sum(nl: &NeighborList) -> Result<f64> {
    let k = nl.k();
    if k < 2 {
        return Err(Error::KTooSmall(k));
    }
    let d = nl.distances();
    if d[0] == 0.0 {
        return Err(Error::ZeroDistance { rank: 1 });
    }
    let r_max = nl.r_max();
    let s: f64 = d.iter().map(|&r| (r / r_max).ln()).sum();
    if s == 0.0 {
        return Err(Error::DegenerateNeighborhood { k });
    }
    Ok(s)
}

pub fn lid_mle(nl: NeighborList) -> Result<LidEstimate> {
    let s = log_ratio_sum(&nl)?;
    let k = nl.k();
    Ok(LidEstimate {
        value: -1.0 / (s / k as f64),
        k,
        neighbors: nl,
    })
}

/// LID of an original feature vector with respect to the generated set.
pub fn ilid(y_feat: &[f64], z_feats: &Points, k_i: usize) -> Result<LidEstimate> {
    lid_mle(neighbors(y_feat, z_feats, k_i, false)?)
}

/// Mean iLID over the batch `y_feats`, with `z_feats` as the shared reference set.
pub fn ilid_loss(y_feats: &Points, z_feats: &Points, k_i: usize) -> Result<f64> {
    if y_feats.is_empty() {
        return Err(Error::Empty("original batch".into()));
    }
    let values = (0..y_feats.len())
        .into_par_iter()
        .map(|i| ilid(y_feats.row(i), z_feats, k_i).map(|e| e.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(ordered_mean(&values))
}

pub fn plid(p: &[f64], q: &PatchSet, k_p: usize) -> Result<LidEstimate> {
    lid_mle(neighbors(p, &q.vectors, k_p, false)?)
}

/// Mean over images of the mean pLID of each original patch against the
/// patches of the matching restored region.
pub fn plid_loss(p_sets: &[PatchSet], q_sets: &[PatchSet], k_p: usize) -> Result<f64> {
    check_pairs(p_sets, q_sets)?;
    let per_image = p_sets
        .par_iter()
        .zip(q_sets)
        .map(|(p, q)| {
            let values = p
                .vectors
                .rows()
                .map(|row| plid(row, q, k_p).map(|e| e.value))
                .collect::<Result<Vec<_>>>()?;
            Ok(ordered_mean(&values))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ordered_mean(&per_image))
}

fn check_pairs(p_sets: &[PatchSet], q_sets: &[PatchSet]) -> Result<()> {
    if p_sets.len() != q_sets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} original patch sets but {} restored patch sets",
            p_sets.len(),
            q_sets.len()
        )));
    }
    if p_sets.is_empty() {
        return Err(Error::Empty("no images".into()));
    }
    if let Some(i) = p_sets.iter().position(|p| p.vectors.is_empty()) {
        return Err(Error::Empty(format!("original patch set of image {i}")));
    }
    Ok(())
}

fn ordered_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Gradient of one LID evaluation with respect to its inputs.
#[derive(Debug, Clone)]
pub struct LidGradient {
    pub estimate: LidEstimate,
    /// `dLID/dz` for each neighbor, aligned with `estimate.neighbors.indices()`.
    pub wrt_neighbors: Vec<Vec<f64>>,
    pub wrt_query: Vec<f64>,
}

impl LidGradient {
    /// Gradient for reference `index`; zero for references outside the neighborhood.
    pub fn wrt_reference(&self, index: usize) -> Vec<f64> {
        self.estimate
            .neighbors
            .indices()
            .iter()
            .position(|&j| j == index)
            .map(|pos| self.wrt_neighbors[pos].clone())
            .unwrap_or_else(|| vec![0.0; self.wrt_query.len()])
    }
}

/// `dLID/dr_i` for each rank under the frozen-neighborhood convention.
pub fn lid_distance_gradient(nl: &NeighborList) -> Result<Vec<f64>> {
    let s = log_ratio_sum(nl)?;
    let k = nl.k();
    let scale = k as f64 / (s * s);
    let d = nl.distances();
    let mut out: Vec<f64> = d.iter().map(|&r| scale / r).collect();
    out[k - 1] = -scale * (k as f64 - 1.0) / d[k - 1];
    Ok(out)
}

/// Gradient of `LID(query; refs)` with respect to the query and its `k`
/// nearest references.
pub fn lid_gradient(query: &[f64], refs: &Points, k: usize) -> Result<LidGradient> {
    lid_gradient_with(query, refs, k, TiePolicy::Report)
}

pub fn lid_gradient_with(query: &[f64], refs: &Points, k: usize, ties: TiePolicy) -> Result<LidGradient> {
    let probe = k + usize::from(refs.len() > k);
    let wide = neighbors(query, refs, probe, false)?;
    let d = wide.distances();
    let report = ties == TiePolicy::Report;
    if report && k >= 2 && (d[k - 1] - d[k - 2]).abs() < TIE_TOLERANCE {
        return Err(Error::NonDifferentiable {
            rank: k - 1,
            tolerance: TIE_TOLERANCE,
        });
    }
    if report && probe > k && (d[k] - d[k - 1]).abs() < TIE_TOLERANCE {
        return Err(Error::NonDifferentiable {
            rank: k,
            tolerance: TIE_TOLERANCE,
        });
    }
    let nl = NeighborList::new(d[..k].to_vec(), wide.indices()[..k].to_vec())?;
    let dr = lid_distance_gradient(&nl)?;

    let mut wrt_query = vec![0.0; query.len()];
    let wrt_neighbors = nl
        .indices()
        .iter()
        .zip(nl.distances())
        .zip(&dr)
        .map(|((&j, &r), &g)| {
            // dr/dz = (z - y) / r
            let z = refs.row(j);
            let grad: Vec<f64> = z.iter().zip(query).map(|(zi, yi)| g * (zi - yi) / r).collect();
            for (acc, v) in wrt_query.iter_mut().zip(&grad) {
                *acc -= v;
            }
            grad
        })
        .collect();
    Ok(LidGradient {
        estimate: lid_mle(nl)?,
        wrt_neighbors,
        wrt_query,
    })
}

pub fn ilid_gradient(y_feat: &[f64], z_feats: &Points, k_i: usize) -> Result<LidGradient> {
    lid_gradient(y_feat, z_feats, k_i)
}

pub fn plid_gradient(p: &[f64], q: &PatchSet, k_p: usize) -> Result<LidGradient> {
    lid_gradient(p, &q.vectors, k_p)
}

/// Value of [`ilid_loss`] and its gradient with respect to every row of `z_feats`.
pub fn ilid_loss_gradient(y_feats: &Points, z_feats: &Points, k_i: usize) -> Result<(f64, Points)> {
    ilid_loss_gradient_with(y_feats, z_feats, k_i, TiePolicy::Report)
}

pub fn ilid_loss_gradient_with(
    y_feats: &Points,
    z_feats: &Points,
    k_i: usize,
    ties: TiePolicy,
) -> Result<(f64, Points)> {
    if y_feats.is_empty() {
        return Err(Error::Empty("original batch".into()));
    }
    let per_query = (0..y_feats.len())
        .into_par_iter()
        .map(|i| lid_gradient_with(y_feats.row(i), z_feats, k_i, ties))
        .collect::<Result<Vec<_>>>()?;
    let n = y_feats.len() as f64;
    let dim = z_feats.dim();
    let mut grad = vec![0.0; z_feats.len() * dim];
    let mut values = Vec::with_capacity(per_query.len());
    for g in &per_query {
        values.push(g.estimate.value);
        accumulate(&mut grad, dim, g, 1.0 / n);
    }
    Ok((ordered_mean(&values), Points::new(dim, grad)?))
}

/// Value of [`plid_loss`] and, per image, its gradient with respect to every
/// restored-region patch vector.
pub fn plid_loss_gradient(
    p_sets: &[PatchSet],
    q_sets: &[PatchSet],
    k_p: usize,
) -> Result<(f64, Vec<Points>)> {
    plid_loss_gradient_with(p_sets, q_sets, k_p, TiePolicy::Report)
}

pub fn plid_loss_gradient_with(
    p_sets: &[PatchSet],
    q_sets: &[PatchSet],
    k_p: usize,
    ties: TiePolicy,
) -> Result<(f64, Vec<Points>)> {
    check_pairs(p_sets, q_sets)?;
    let n_images = p_sets.len() as f64;
    let per_image = p_sets
        .par_iter()
        .zip(q_sets)
        .map(|(p, q)| {
            let dim = q.vectors.dim();
            let weight = 1.0 / (p.vectors.len() as f64 * n_images);
            let mut grad = vec![0.0; q.vectors.len() * dim];
            let mut values = Vec::with_capacity(p.vectors.len());
            for row in p.vectors.rows() {
                let g = lid_gradient_with(row, &q.vectors, k_p, ties)?;
                values.push(g.estimate.value);
                accumulate(&mut grad, dim, &g, weight);
            }
            Ok((ordered_mean(&values), Points::new(dim, grad)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = per_image.iter().map(|(v, _)| *v).collect();
    let grads = per_image.into_iter().map(|(_, g)| g).collect();
    Ok((ordered_mean(&means), grads))
}

fn accumulate(grad: &mut [f64], dim: usize, g: &LidGradient, weight: f64) {
    for (&j, gz) in g.estimate.neighbors.indices().iter().zip(&g.wrt_neighbors) {
        for (acc, v) in grad[j * dim..(j + 1) * dim].iter_mut().zip(gz) {
            *acc += weight * v;
        }
    }
}
