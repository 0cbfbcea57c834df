//! Independent reference computations shared by the integration suites.
#![allow(dead_code)]

use std::path::Path;

use plantdoc_core::data::{
    generate_synthetic_dataset, reference_classes, scan_manifest, DatasetManifest,
};
use plantdoc_core::{Padding, SeededRng, Tensor};

/// Reference architecture table: (name, output shape, parameters).
pub const REFERENCE_LAYERS: [(&str, &[usize], usize); 20] = [
    ("conv2d", &[256, 256, 32], 896),
    ("conv2d_1", &[254, 254, 32], 9_248),
    ("max_pooling2d", &[127, 127, 32], 0),
    ("conv2d_2", &[127, 127, 64], 18_496),
    ("conv2d_3", &[125, 125, 64], 36_928),
    ("max_pooling2d_1", &[62, 62, 64], 0),
    ("conv2d_4", &[62, 62, 128], 73_856),
    ("conv2d_5", &[60, 60, 128], 147_584),
    ("max_pooling2d_2", &[30, 30, 128], 0),
    ("conv2d_6", &[30, 30, 256], 295_168),
    ("conv2d_7", &[28, 28, 256], 590_080),
    ("max_pooling2d_3", &[14, 14, 256], 0),
    ("conv2d_8", &[14, 14, 512], 3_277_312),
    ("conv2d_9", &[10, 10, 512], 6_554_112),
    ("max_pooling2d_4", &[5, 5, 512], 0),
    ("dropout", &[5, 5, 512], 0),
    ("flatten", &[12_800], 0),
    ("dense", &[1_536], 19_662_336),
    ("dropout_1", &[1_536], 0),
    ("Dense_1", &[38], 58_406),
];

pub const TOTAL_PARAMS: usize = 30_724_422;

/// Published per-epoch history: (loss, accuracy, val_loss, val_accuracy).
pub const REFERENCE_HISTORY: [(f32, f32, f32, f32); 15] = [
    (1.2012, 0.6456, 0.4188, 0.8631),
    (0.3175, 0.8983, 0.2230, 0.9272),
    (0.1819, 0.9415, 0.1971, 0.9352),
    (0.1254, 0.9594, 0.1327, 0.9593),
    (0.0913, 0.9704, 0.1145, 0.9637),
    (0.0716, 0.9769, 0.1255, 0.9599),
    (0.0613, 0.9801, 0.1094, 0.9670),
    (0.0506, 0.9839, 0.1172, 0.9672),
    (0.0454, 0.9855, 0.1084, 0.9684),
    (0.0420, 0.9866, 0.0782, 0.9774),
    (0.0359, 0.9885, 0.0708, 0.9788),
    (0.0329, 0.9895, 0.0857, 0.9772),
    (0.0298, 0.9904, 0.0643, 0.9829),
    (0.0298, 0.9908, 0.0722, 0.9784),
    (0.0268, 0.9914, 0.0683, 0.9814),
];

pub fn uniform64(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform_f64(lo, hi))
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)`; the floor keeps entries that
/// are zero on both sides from dividing rounding noise by zero.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// `sum(g * y)`: a scalar whose gradient with respect to `y` is `g`.
pub fn probe_loss(y: &Tensor<f64>, g: &Tensor<f64>) -> f64 {
    y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
}

/// Direct-loop convolution over `[H, W, C]` with weights `[k, k, in, out]`.
pub fn direct_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    padding: Padding,
) -> Tensor<f64> {
    let (h, wd, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, out) = (w.shape()[0], w.shape()[3]);
    let (before, oh, ow) = match padding {
        Padding::Same => ((k - 1) / 2, h, wd),
        Padding::Valid => (0, h - k + 1, wd - k + 1),
    };
    let mut y = vec![0.0; oh * ow * out];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..out {
                let mut acc = b.data()[o];
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy + ky) as isize - before as isize;
                        let ix = (ox + kx) as isize - before as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            continue;
                        }
                        for ci in 0..c {
                            acc += x.data()[(iy as usize * wd + ix as usize) * c + ci]
                                * w.data()[((ky * k + kx) * c + ci) * out + o];
                        }
                    }
                }
                y[(oy * ow + ox) * out + o] = acc;
            }
        }
    }
    Tensor::new(vec![oh, ow, out], y).unwrap()
}

/// Direct 2x2 stride-2 max-pool.
pub fn direct_pool(x: &Tensor<f64>) -> Tensor<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    Tensor::from_fn(vec![oh, ow, c], |i| {
        let (oy, ox, ch) = (i / (ow * c), (i / c) % ow, i % c);
        let mut m = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                m = m.max(x.data()[((2 * oy + dy) * w + 2 * ox + dx) * c + ch]);
            }
        }
        m
    })
}

/// Per-class and macro scores recounted sample by sample.
#[derive(Debug, PartialEq)]
pub struct OracleMetrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

pub fn brute_force_metrics(truth: &[usize], pred: &[usize], n: usize) -> OracleMetrics {
    let (mut tp, mut fp, mut fne) = (vec![0u64; n], vec![0u64; n], vec![0u64; n]);
    let mut correct = 0u64;
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fne[t] += 1;
        }
    }
    let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision: Vec<f64> = (0..n).map(|c| div(tp[c], tp[c] + fp[c])).collect();
    let recall: Vec<f64> = (0..n).map(|c| div(tp[c], tp[c] + fne[c])).collect();
    let f1: Vec<f64> = (0..n)
        .map(|c| {
            let (p, r) = (precision[c], recall[c]);
            if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            }
        })
        .collect();
    let present: Vec<usize> = (0..n).filter(|&c| tp[c] + fp[c] + fne[c] > 0).collect();
    let mean = |v: &[f64]| present.iter().map(|&c| v[c]).sum::<f64>() / present.len() as f64;
    OracleMetrics {
        accuracy: correct as f64 / truth.len() as f64,
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
    }
}

/// Write `n_classes x per_class` synthetic images and scan them back with
/// the first `n_classes` class records.
pub fn synthetic_manifest(
    dir: &Path,
    n_classes: usize,
    per_class: usize,
    seed: u64,
    side: usize,
) -> DatasetManifest {
    let classes = reference_classes()[..n_classes].to_vec();
    generate_synthetic_dataset(&classes, n_classes, per_class, seed, dir, side).unwrap();
    scan_manifest(dir, &classes).unwrap()
}

pub mod gradcheck;

/// One random im2col configuration: `(h, w, c, kernel, padding)` with the
/// kernel fitting the image for valid padding.
pub fn random_conv_shape(rng: &mut SeededRng) -> (usize, usize, usize, usize, Padding) {
    loop {
        let (h, w, c, k) = (
            1 + rng.below(9),
            1 + rng.below(9),
            1 + rng.below(4),
            1 + rng.below(5),
        );
        let padding = if rng.bernoulli(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        };
        if padding == Padding::Same || (k <= h && k <= w) {
            return (h, w, c, k, padding);
        }
    }
}

/// Relative gap between `<im2col(x), g>` and `<x, col2im(g)>`.
pub fn adjoint_gap<T: plantdoc_core::tensor::Scalar>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    k: usize,
    padding: Padding,
) -> f64 {
    use plantdoc_core::tensor::{col2im, im2col};
    let lhs = im2col(x, k, padding).unwrap().dot(g).unwrap();
    let rhs = x.dot(&col2im(g, x.shape(), k, padding).unwrap()).unwrap();
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
}

/// Worst adjointness gap over `n` random shapes, in f32 with inputs in
/// [0, 1) and in f64 with signed inputs.
pub fn adjointness(seed: u64, n: usize) -> (f64, f64) {
    let mut rng = SeededRng::new(seed);
    let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let (h, w, c, k, padding) = random_conv_shape(&mut rng);
        let (oh, ow) = padding.output_dims(h, w, k).unwrap();
        let x = plantdoc_core::tensor::rng_uniform(&mut rng, [h, w, c], 0.0, 1.0).unwrap();
        let g =
            plantdoc_core::tensor::rng_uniform(&mut rng, [oh * ow, k * k * c], 0.0, 1.0).unwrap();
        worst32 = worst32.max(adjoint_gap(&x, &g, k, padding));
        let x = uniform64(&mut rng, &[h, w, c], -1.0, 1.0);
        let g = uniform64(&mut rng, &[oh * ow, k * k * c], -1.0, 1.0);
        worst64 = worst64.max(adjoint_gap(&x, &g, k, padding));
    }
    (worst32, worst64)
}
