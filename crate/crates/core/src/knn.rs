//! Exact brute-force nearest-neighbor search.
//!
//! Neighbors are ordered by `(distance, reference index)`, so equal distances
//! resolve to the lower index and repeated queries return identical lists.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{l2_distance_f64, DenseTensor};

/// A set of equal-length vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty("points need a positive dimension".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not split into rows of length {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Empty("no rows given".into()))?;
        let mut out = Self::with_dim(first.as_ref().len());
        for row in rows {
            out.push(row.as_ref())?;
        }
        Ok(out)
    }

    /// Interprets the leading axis as the point index and flattens the rest.
    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        let n = t.shape()[0];
        Self::new(t.len() / n, t.to_f64())
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// The `k` nearest references of a query, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    distances: Vec<f64>,
    indices: Vec<usize>,
}

impl NeighborList {
    /// Builds a list from already-known distances; indices are `0..k`.
    pub fn from_distances(distances: Vec<f64>) -> Result<Self> {
        let indices = (0..distances.len()).collect();
        Self::new(distances, indices)
    }

    pub fn new(distances: Vec<f64>, indices: Vec<usize>) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::Empty("neighbor list".into()));
        }
        if distances.len() != indices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} distances but {} indices",
                distances.len(),
                indices.len()
            )));
        }
        if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Check("neighbor distances must be finite and nonnegative".into()));
        }
        if distances.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Check("neighbor distances must be sorted ascending".into()));
        }
        Ok(Self { distances, indices })
    }

    pub fn k(&self) -> usize {
        self.distances.len()
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Distance to the k-th neighbor.
    pub fn r_max(&self) -> f64 {
        self.distances[self.distances.len() - 1]
    }
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Distances from `query` to every reference, ascending by `(distance, index)`,
/// truncated to the first `k` entries.
fn ranked(
    query: &[f64],
    refs: &Points,
    k: usize,
    skip: impl Fn(usize, f64) -> bool,
) -> Result<Vec<(f64, usize)>> {
    if query.len() != refs.dim() {
        return Err(Error::DimensionMismatch {
            expected: refs.dim(),
            found: query.len(),
        });
    }
    if k == 0 {
        return Err(Error::Empty("k must be positive".into()));
    }
    let mut all: Vec<(f64, usize)> = refs
        .rows()
        .enumerate()
        .map(|(i, r)| (l2_distance_f64(query, r), i))
        .collect();
    let mut skipped = false;
    all.retain(|&(d, i)| {
        if !skipped && skip(i, d) {
            skipped = true;
            false
        } else {
            true
        }
    });
    if k > all.len() {
        return Err(Error::KTooLarge {
            k,
            available: all.len(),
        });
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by_distance_then_index);
        all.truncate(k);
    }
    all.sort_unstable_by(by_distance_then_index);
    Ok(all)
}

fn into_list(ranked: Vec<(f64, usize)>) -> NeighborList {
    let (distances, indices) = ranked.into_iter().unzip();
    NeighborList { distances, indices }
}

/// The `k` nearest references to `query`.
///
/// With `exclude_self`, the lowest-index reference at distance exactly zero
/// is treated as the query itself and skipped; further duplicates are kept.
pub fn neighbors(query: &[f64], refs: &Points, k: usize, exclude_self: bool) -> Result<NeighborList> {
    let list = ranked(query, refs, k, |_, d| exclude_self && d == 0.0)?;
    Ok(into_list(list))
}

/// Neighbors of `refs.row(member)` within `refs`, skipping that row by index.
pub fn neighbors_of_member(refs: &Points, member: usize, k: usize) -> Result<NeighborList> {
    if member >= refs.len() {
        return Err(Error::Check(format!(
            "member index {member} out of range for {} points",
            refs.len()
        )));
    }
    let list = ranked(refs.row(member), refs, k, |i, _| i == member)?;
    Ok(into_list(list))
}

/// Row-major `|a| x |b|` matrix of Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn pairwise_distances(a: &Points, b: &Points) -> Result<DistanceMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let cols = b.len();
    let mut data = vec![0.0; a.len() * cols];
    if cols > 0 {
        data.par_chunks_mut(cols).enumerate().for_each(|(i, out)| {
            let q = a.row(i);
            for (j, slot) in out.iter_mut().enumerate() {
                *slot = l2_distance_f64(q, b.row(j));
            }
        });
    }
    Ok(DistanceMatrix {
        rows: a.len(),
        cols,
        data,
    })
}
