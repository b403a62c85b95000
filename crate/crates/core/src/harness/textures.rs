//! Seeded procedural textures and directory datasets.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::load_image;
use crate::net::Array;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Stripes,
    Checkers,
    Gradient,
    /// Kind drawn per image.
    #[default]
    Mixed,
}

/// RNG for the `index`-th item of stream `tag` under `seed`.
pub fn stream_rng(seed: u64, tag: u8, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tag as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}

const TEXTURE_STREAM: u8 = 1;

fn color(rng: &mut impl Rng, channels: usize) -> Vec<f64> {
    (0..channels).map(|_| rng.gen_range(0.1..0.9)).collect()
}

/// `size x size x channels` texture with values in `[0, 1]`.
pub fn texture(seed: u64, index: u64, kind: TextureKind, size: usize, channels: usize) -> Array {
    let mut rng = stream_rng(seed, TEXTURE_STREAM, index);
    let kind = match kind {
        TextureKind::Mixed => match rng.gen_range(0..3) {
            0 => TextureKind::Stripes,
            1 => TextureKind::Checkers,
            _ => TextureKind::Gradient,
        },
        k => k,
    };
    let a = color(&mut rng, channels);
    let b = color(&mut rng, channels);
    let angle = rng.gen_range(0.0..PI);
    let (dy, dx) = angle.sin_cos();
    let period = rng.gen_range(3.0..8.0);
    let phase = rng.gen_range(0.0..1.0);
    let cell = rng.gen_range(2..=5);
    let mut data = Vec::with_capacity(size * size * channels);
    for r in 0..size {
        for c in 0..size {
            let t = match kind {
                TextureKind::Stripes => {
                    let u = (r as f64 * dy + c as f64 * dx) / period + phase;
                    0.5 + 0.5 * (2.0 * PI * u).sin()
                }
                TextureKind::Checkers => ((r / cell + c / cell) % 2) as f64,
                _ => (r as f64 * dy + c as f64 * dx) / (size as f64 * 1.5),
            };
            let t = t.clamp(0.0, 1.0);
            data.extend(a.iter().zip(&b).map(|(x, y)| (1.0 - t) * x + t * y));
        }
    }
    Array::new(vec![size, size, channels], data).expect("texture buffer matches its shape")
}

pub fn textures(seed: u64, count: usize, kind: TextureKind, size: usize, channels: usize) -> Vec<Array> {
    (0..count as u64)
        .map(|i| texture(seed, i, kind, size, channels))
        .collect()
}

/// Every `.png` or `.dt` image under `dir` (not recursive), sorted by file
/// name. All images must share one shape.
pub fn load_dataset(dir: &Path) -> Result<Vec<Array>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("dt"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty(format!("no .png or .dt images in {}", dir.display())));
    }
    let images = paths
        .iter()
        .map(|p| load_image(p).map(|t| Array::from_tensor(&t)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = images.iter().position(|a| a.shape != images[0].shape) {
        return Err(Error::ShapeMismatch(format!(
            "{} has shape {:?} but {} has {:?}",
            paths[bad].display(),
            images[bad].shape,
            paths[0].display(),
            images[0].shape
        )));
    }
    Ok(images)
}
