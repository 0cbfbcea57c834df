//! Procedural stand-in for the leaf image dataset. Each class gets its own
//! colour and stripe texture; diseased classes also carry dark lesion spots.

use std::path::{Path, PathBuf};

use super::classes::ClassInfo;
use super::image::encode_png;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Tensor;

const LEVELS: [f32; 4] = [0.1, 0.4, 0.7, 1.0];
const LESION_COLOR: [f32; 3] = [0.35, 0.22, 0.1];

/// Per-class base colours chosen by greedy farthest-point selection over a
/// 4x4x4 lattice of the RGB cube, starting from red.
pub fn class_palette(n: usize) -> Vec<[f32; 3]> {
    let mut lattice = Vec::with_capacity(64);
    for &r in &LEVELS {
        for &g in &LEVELS {
            for &b in &LEVELS {
                lattice.push([r, g, b]);
            }
        }
    }
    let dist = |a: &[f32; 3], b: &[f32; 3]| -> f32 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>()
    };
    let mut chosen = vec![[1.0, 0.1, 0.1]];
    while chosen.len() < n.min(lattice.len()) {
        let next = lattice
            .iter()
            .filter(|p| !chosen.contains(p))
            .max_by(|a, b| {
                let da = chosen.iter().map(|c| dist(a, c)).fold(f32::MAX, f32::min);
                let db = chosen.iter().map(|c| dist(b, c)).fold(f32::MAX, f32::min);
                da.partial_cmp(&db).expect("finite distances")
            })
            .copied()
            .expect("lattice larger than class count");
        chosen.push(next);
    }
    chosen.truncate(n);
    chosen
}

/// Render one synthetic leaf image `[side, side, 3]` in [0, 1].
pub fn render_sample(
    class: &ClassInfo,
    base: [f32; 3],
    side: usize,
    rng: &mut SeededRng,
) -> Tensor {
    let i = class.class_index;
    let angle = (((i * 47) % 180) as f64 + rng.uniform_inclusive(-10.0, 10.0)).to_radians();
    let cycles = 2.0 + (i % 5) as f64;
    let phase = rng.uniform_f64(0.0, std::f64::consts::TAU);
    let (sin, cos) = angle.sin_cos();

    let lesions: Vec<(f64, f64, f64)> = if class.healthy {
        Vec::new()
    } else {
        let count = 3 + rng.below(4);
        (0..count)
            .map(|_| {
                let r = rng.uniform_f64(0.04, 0.09) * side as f64;
                (
                    rng.uniform_f64(0.0, side as f64),
                    rng.uniform_f64(0.0, side as f64),
                    r,
                )
            })
            .collect()
    };

    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let t = (x as f64 * cos + y as f64 * sin) / side as f64;
            let stripe = 0.5 + 0.5 * (std::f64::consts::TAU * cycles * t + phase).sin();
            let shade = 0.75 + 0.25 * stripe as f32;
            let in_lesion = lesions.iter().any(|&(ly, lx, r)| {
                let (dy, dx) = (y as f64 - ly, x as f64 - lx);
                dy * dy + dx * dx <= r * r
            });
            for ch in 0..3 {
                let mut v = base[ch] * shade;
                if in_lesion {
                    v = 0.4 * v + 0.6 * LESION_COLOR[ch];
                }
                v += rng.uniform_f32(-0.04, 0.04);
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![side, side, 3], data).expect("side is positive")
}

/// Write `n_per_class` PNGs for each of the first `n_classes` classes into
/// `out_dir/<directory_name>/`. Deterministic for a given seed.
pub fn generate_synthetic_dataset(
    classes: &[ClassInfo],
    n_classes: usize,
    n_per_class: usize,
    seed: u64,
    out_dir: &Path,
    side: usize,
) -> Result<Vec<PathBuf>> {
    if n_classes == 0 || n_classes > classes.len() {
        return Err(Error::arg(format!(
            "class count must be in 1..={}, got {n_classes}",
            classes.len()
        )));
    }
    if side < 2 {
        return Err(Error::arg("image side must be at least 2"));
    }
    let palette = class_palette(n_classes);
    let mut written = Vec::with_capacity(n_classes * n_per_class);
    for (class, &base) in classes.iter().take(n_classes).zip(&palette) {
        let dir = out_dir.join(&class.directory_name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for j in 0..n_per_class {
            let mut rng = SeededRng::new(derive_seed(
                seed,
                (class.class_index * 1_000_003 + j) as u64,
            ));
            let img = render_sample(class, base, side, &mut rng);
            let path = dir.join(format!("synthetic_{j:05}.png"));
            std::fs::write(&path, encode_png(&img)?).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
