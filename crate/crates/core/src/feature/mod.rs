//! Feature transforms, 3x3 patch sets, masks and mask compositing.

mod mask;
mod transform;

pub use mask::{
    composite, composite_array, random_mask, scaled_side_range, Mask, Rect, MAX_SIDE, MIN_SIDE,
    REFERENCE_EXTENT,
};
pub use transform::{apply_transform, Transform, TransformSpec, TransformTape};

use crate::error::{Error, Result};
use crate::knn::Points;
use crate::net::Array;
use crate::tensor::DenseTensor;

pub const PATCH: usize = 3;

/// `H x W x C` features computed from an `H0 x W0` image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    values: Array,
    source: (usize, usize),
    transform_id: String,
}

impl FeatureMap {
    pub fn new(values: Array, source: (usize, usize), transform_id: String) -> Result<Self> {
        if values.shape.len() != 3 || values.shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "feature map must be HxWxC, got {:?}",
                values.shape
            )));
        }
        let (h, w) = (values.shape[0], values.shape[1]);
        let (h0, w0) = source;
        if h0 % h != 0 || w0 % w != 0 || h0 / h != w0 / w {
            return Err(Error::ShapeMismatch(format!(
                "{h}x{w} features do not evenly downscale a {h0}x{w0} image"
            )));
        }
        Ok(Self {
            values,
            source,
            transform_id,
        })
    }

    pub fn values(&self) -> &Array {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.values.shape[0], self.values.shape[1], self.values.shape[2])
    }

    pub fn source_shape(&self) -> (usize, usize) {
        self.source
    }

    pub fn downscale(&self) -> usize {
        self.source.0 / self.values.shape[0]
    }

    pub fn transform_id(&self) -> &str {
        &self.transform_id
    }

    pub fn to_tensor(&self) -> Result<DenseTensor> {
        self.values.to_tensor()
    }
}

/// Flattened `3 x 3 x C` patches with their top-left feature coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub vectors: Points,
    pub coords: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn window_set(
    fm: &FeatureMap,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> PatchSet {
    let (_, w, c) = fm.shape();
    let data = &fm.values.data;
    let mut vectors = Points::with_dim(PATCH * PATCH * c);
    let mut coords = Vec::new();
    let mut buf = Vec::with_capacity(PATCH * PATCH * c);
    for r in rows {
        for col in cols.clone() {
            buf.clear();
            for dy in 0..PATCH {
                let start = ((r + dy) * w + col) * c;
                buf.extend_from_slice(&data[start..start + PATCH * c]);
            }
            vectors.push(&buf).expect("window length matches patch dimension");
            coords.push((r, col));
        }
    }
    PatchSet { vectors, coords }
}

/// Every 3x3 window at stride 1, in row-major order of the top-left cell.
pub fn extract_patches(fm: &FeatureMap) -> Result<PatchSet> {
    let (h, w, _) = fm.shape();
    if h < PATCH || w < PATCH {
        return Err(Error::ShapeMismatch(format!(
            "{h}x{w} feature map is smaller than a {PATCH}x{PATCH} patch"
        )));
    }
    Ok(window_set(fm, 0..h - PATCH + 1, 0..w - PATCH + 1))
}

/// Feature-resolution rows and columns whose whole pixel footprint lies
/// inside the missing rectangle.
pub fn region_cells(fm: &FeatureMap, mask: &Mask) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    if (mask.height(), mask.width()) != fm.source_shape() {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs feature source {:?}",
            mask.height(),
            mask.width(),
            fm.source_shape()
        )));
    }
    let rect = mask
        .bbox()
        .ok_or_else(|| Error::RegionTooSmall("mask has no missing region".into()))?;
    let s = fm.downscale();
    let rows = rect.top.div_ceil(s)..(rect.top + rect.height) / s;
    let cols = rect.left.div_ceil(s)..(rect.left + rect.width) / s;
    Ok((rows, cols))
}

/// Windows that fall entirely inside the restored (missing) region.
pub fn extract_region_patches(fm: &FeatureMap, mask: &Mask) -> Result<PatchSet> {
    extract_patches(fm)?;
    let (rows, cols) = region_cells(fm, mask)?;
    if rows.len() < PATCH || cols.len() < PATCH {
        return Err(Error::RegionTooSmall(format!(
            "missing region {:?} covers {}x{} cells at feature resolution (downscale {}); a {PATCH}x{PATCH} window does not fit",
            mask.bbox(),
            rows.len(),
            cols.len(),
            fm.downscale()
        )));
    }
    Ok(window_set(
        fm,
        rows.start..rows.end - PATCH + 1,
        cols.start..cols.end - PATCH + 1,
    ))
}

/// Adds per-patch gradients back onto the `H x W x C` cells they were read from.
pub fn scatter_patch_gradients(shape: (usize, usize, usize), patches: &PatchSet, grads: &Points) -> Result<Array> {
    let (h, w, c) = shape;
    if grads.len() != patches.len() || grads.dim() != PATCH * PATCH * c {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients of length {} for {} patches of {c} channels",
            grads.len(),
            grads.dim(),
            patches.len()
        )));
    }
    let mut out = Array::zeros(vec![h, w, c]);
    for (&(r, col), g) in patches.coords.iter().zip(grads.rows()) {
        for dy in 0..PATCH {
            let start = ((r + dy) * w + col) * c;
            let src = &g[dy * PATCH * c..(dy + 1) * PATCH * c];
            for (o, v) in out.data[start..start + PATCH * c].iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    Ok(out)
}
