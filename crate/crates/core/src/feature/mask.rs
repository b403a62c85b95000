use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::Array;
use crate::tensor::DenseTensor;

/// Mask sizes are given for 256x256 images and scale proportionally.
pub const REFERENCE_EXTENT: usize = 256;
pub const MIN_SIDE: usize = 40;
pub const MAX_SIDE: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Binary mask: 0 at missing pixels (inside `bbox`), 1 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    tensor: DenseTensor,
    bbox: Option<Rect>,
}

impl Mask {
    pub fn from_rect(height: usize, width: usize, rect: Rect) -> Result<Self> {
        if rect.height == 0
            || rect.width == 0
            || rect.top + rect.height > height
            || rect.left + rect.width > width
        {
            return Err(Error::ShapeMismatch(format!(
                "rectangle {rect:?} does not fit a {height}x{width} image"
            )));
        }
        let mut data = vec![1.0f32; height * width];
        for r in rect.top..rect.top + rect.height {
            data[r * width + rect.left..r * width + rect.left + rect.width].fill(0.0);
        }
        Ok(Self {
            tensor: DenseTensor::new(vec![height, width], data)?,
            bbox: Some(rect),
        })
    }

    /// Nothing missing.
    pub fn none(height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            tensor: DenseTensor::filled(vec![height, width], 1.0)?,
            bbox: None,
        })
    }

    /// Everything missing.
    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::from_rect(
            height,
            width,
            Rect {
                top: 0,
                left: 0,
                height,
                width,
            },
        )
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.tensor
    }

    pub fn bbox(&self) -> Option<Rect> {
        self.bbox
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.tensor.data()[row * self.width() + col] == 0.0
    }

    pub fn missing_count(&self) -> usize {
        self.bbox.map_or(0, |r| r.height * r.width)
    }
}

/// Inclusive side-length range after scaling the reference range to `extent`.
pub fn scaled_side_range(extent: usize) -> (usize, usize) {
    let scale = |side: usize| ((side * extent) as f64 / REFERENCE_EXTENT as f64).round() as usize;
    (scale(MIN_SIDE), scale(MAX_SIDE))
}

/// Random rectangle with uniformly drawn side lengths in the scaled range
/// and a uniformly drawn position that keeps it inside the image.
pub fn random_mask(seed: u64, height: usize, width: usize) -> Result<Mask> {
    let (h_lo, h_hi) = scaled_side_range(height);
    let (w_lo, w_hi) = scaled_side_range(width);
    if h_lo == 0 || w_lo == 0 || h_hi > height || w_hi > width {
        return Err(Error::ImageTooSmall(format!(
            "{height}x{width} cannot hold a mask scaled from {MIN_SIDE}..{MAX_SIDE} at {REFERENCE_EXTENT}x{REFERENCE_EXTENT}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rect_h = rng.gen_range(h_lo..=h_hi);
    let rect_w = rng.gen_range(w_lo..=w_hi);
    let top = rng.gen_range(0..=height - rect_h);
    let left = rng.gen_range(0..=width - rect_w);
    Mask::from_rect(
        height,
        width,
        Rect {
            top,
            left,
            height: rect_h,
            width: rect_w,
        },
    )
}

fn check_composite_shapes(x: &[usize], gx: &[usize], mask: &Mask) -> Result<()> {
    if x != gx {
        return Err(Error::ShapeMismatch(format!("{x:?} vs {gx:?}")));
    }
    if x.len() < 2 || x[0] != mask.height() || x[1] != mask.width() {
        return Err(Error::ShapeMismatch(format!(
            "image {x:?} vs mask {}x{}",
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

/// `t * x + (1 - t) * gx`, broadcasting the mask over trailing channel axes.
pub fn composite(x: &DenseTensor, gx: &DenseTensor, mask: &Mask) -> Result<DenseTensor> {
    check_composite_shapes(x.shape(), gx.shape(), mask)?;
    let channels = x.len() / (mask.height() * mask.width());
    let t = mask.tensor().data();
    let data = x
        .data()
        .iter()
        .zip(gx.data())
        .enumerate()
        .map(|(i, (&a, &b))| {
            let m = t[i / channels];
            m * a + (1.0 - m) * b
        })
        .collect();
    DenseTensor::new(x.shape().to_vec(), data)
}

/// [`composite`] on `f64` arrays of shape `[H, W, C]`.
pub fn composite_array(x: &Array, gx: &Array, mask: &Mask) -> Result<Array> {
    check_composite_shapes(&x.shape, &gx.shape, mask)?;
    let channels = x.len() / (mask.height() * mask.width());
    let t = mask.tensor().data();
    let data = x
        .data
        .iter()
        .zip(&gx.data)
        .enumerate()
        .map(|(i, (&a, &b))| {
            let m = f64::from(t[i / channels]);
            m * a + (1.0 - m) * b
        })
        .collect();
    Array::new(x.shape.clone(), data)
}
