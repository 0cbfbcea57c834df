use serde::{Deserialize, Serialize};

use super::image::sample_bilinear;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Random label-preserving transforms applied to training images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Rotation drawn uniformly from `[-max, +max]` degrees.
    pub rotation_degrees_max: f64,
    pub horizontal_flip_prob: f64,
    pub vertical_flip_prob: f64,
    /// Zoom factor drawn uniformly from `[lo, hi]`; above 1 crops, below 1
    /// shrinks with border fill.
    pub zoom_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_degrees_max: 20.0,
            horizontal_flip_prob: 0.5,
            vertical_flip_prob: 0.5,
            zoom_range: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    /// A configuration that leaves every pixel untouched.
    pub fn identity() -> Self {
        Self {
            rotation_degrees_max: 0.0,
            horizontal_flip_prob: 0.0,
            vertical_flip_prob: 0.0,
            zoom_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.zoom_range;
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.rotation_degrees_max >= 0.0 && self.rotation_degrees_max.is_finite()) {
            return Err(Error::arg("rotation_degrees_max must be finite and >= 0"));
        }
        if !prob_ok(self.horizontal_flip_prob) || !prob_ok(self.vertical_flip_prob) {
            return Err(Error::arg("flip probabilities must be in [0, 1]"));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::arg(format!(
                "zoom range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Rotate, flip, then zoom a normalized `[H, W, C]` image. Output has the
/// input's shape with values clamped to [0, 1].
///
/// Exactly four draws are taken from `rng` regardless of configuration.
pub fn augment(img: &Tensor, cfg: &AugmentConfig, rng: &mut SeededRng) -> Result<Tensor> {
    cfg.validate()?;
    let (h, w, c) = img.dims3("image")?;
    let r = cfg.rotation_degrees_max;
    let angle = rng.uniform_inclusive(-r, r).to_radians();
    let flip_h = rng.bernoulli(cfg.horizontal_flip_prob);
    let flip_v = rng.bernoulli(cfg.vertical_flip_prob);
    let zoom = rng.uniform_inclusive(cfg.zoom_range.0, cfg.zoom_range.1);

    let mut data = img.data().to_vec();
    if angle != 0.0 {
        let (sin, cos) = angle.sin_cos();
        data = warp(&data, h, w, c, |dy, dx| {
            (cos * dy + sin * dx, -sin * dy + cos * dx)
        });
    }
    if flip_h {
        data = flip(&data, h, w, c, false);
    }
    if flip_v {
        data = flip(&data, h, w, c, true);
    }
    if zoom != 1.0 {
        data = warp(&data, h, w, c, |dy, dx| (dy / zoom, dx / zoom));
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new(vec![h, w, c], data)
}

/// Resample with an inverse map on centre-relative coordinates.
fn warp(
    src: &[f32],
    h: usize,
    w: usize,
    c: usize,
    inverse: impl Fn(f64, f64) -> (f64, f64),
) -> Vec<f32> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = inverse(y as f64 - cy, x as f64 - cx);
            sample_bilinear(
                src,
                h,
                w,
                c,
                sy + cy,
                sx + cx,
                &mut out[(y * w + x) * c..][..c],
            );
        }
    }
    out
}

fn flip(src: &[f32], h: usize, w: usize, c: usize, vertical: bool) -> Vec<f32> {
    let mut out = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = if vertical {
                (h - 1 - y, x)
            } else {
                (y, w - 1 - x)
            };
            out[(y * w + x) * c..][..c].copy_from_slice(&src[(sy * w + sx) * c..][..c]);
        }
    }
    out
}
