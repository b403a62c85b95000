//! Image ingestion and export.
//!
//! PNGs are read as 8-bit grayscale or RGB (alpha is dropped) and scaled to
//! `[0, 1]`. Images are `H x W x C` tensors.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{load_tensor, DenseTensor};

fn image_err(path: &Path, message: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub fn load_png(path: &Path) -> Result<DenseTensor> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        DynamicImage::ImageLumaA8(_) => (1, img.to_luma8().into_raw()),
        DynamicImage::ImageRgb8(rgb) => (3, rgb.into_raw()),
        DynamicImage::ImageRgba8(_) => (3, img.to_rgb8().into_raw()),
        other => {
            return Err(image_err(
                path,
                format!("unsupported pixel format {:?}; only 8-bit images are read", other.color()),
            ))
        }
    };
    DenseTensor::new(
        vec![h, w, channels],
        bytes.into_iter().map(|b| f32::from(b) / 255.0).collect(),
    )
}

/// Loads a `.dt` tensor (`H x W` or `H x W x C`) or an 8-bit PNG.
pub fn load_image(path: &Path) -> Result<DenseTensor> {
    let is_dt = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("dt"));
    let t = if is_dt { load_tensor(path)? } else { load_png(path)? };
    match t.ndim() {
        2 => {
            let shape = vec![t.shape()[0], t.shape()[1], 1];
            t.reshape(shape)
        }
        3 => Ok(t),
        _ => Err(image_err(path, format!("expected an image tensor, found shape {:?}", t.shape()))),
    }
}

/// Writes a `[0, 1]` image (values clamped) as an 8-bit PNG.
pub fn save_png(t: &DenseTensor, path: &Path) -> Result<()> {
    let shape = t.shape();
    let (h, w, c) = match shape {
        [h, w] => (*h, *w, 1),
        [h, w, c] => (*h, *w, *c),
        _ => return Err(image_err(path, format!("cannot write shape {shape:?} as PNG"))),
    };
    let bytes: Vec<u8> = t
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w32, h32) = (w as u32, h as u32);
    let result = match c {
        1 => GrayImage::from_raw(w32, h32, bytes).map(|i| i.save(path)),
        3 => RgbImage::from_raw(w32, h32, bytes).map(|i| i.save(path)),
        _ => return Err(image_err(path, format!("{c} channels cannot be written as PNG"))),
    };
    result
        .ok_or_else(|| image_err(path, "buffer size mismatch"))?
        .map_err(|e| image_err(path, e))
}
