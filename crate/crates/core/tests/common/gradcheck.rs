//! Finite-difference checks of every layer's backward pass, in f64.

use plantdoc_core::layers::{relu, relu_backward, softmax_cross_entropy, Conv2D, Dense, MaxPool2D};
use plantdoc_core::{Padding, SeededRng, Tensor};

use super::{max_rel_err, numeric_grad, probe_loss, uniform64};

pub const STEP: f64 = 1e-3;
pub const FLOOR: f64 = 1e-4;

fn tensor_like(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::new(t.shape().to_vec(), data.to_vec()).unwrap()
}

/// Worst relative error over input, weight and bias gradients.
pub fn conv(
    rng: &mut SeededRng,
    h: usize,
    w: usize,
    c: usize,
    out: usize,
    k: usize,
    padding: Padding,
) -> f64 {
    let x = uniform64(rng, &[h, w, c], -1.0, 1.0);
    let wt = uniform64(rng, &[k, k, c, out], -0.5, 0.5);
    let b = uniform64(rng, &[out], -0.5, 0.5);
    let layer = Conv2D::new(c, out, k, padding, wt.clone(), b.clone()).unwrap();
    let y = layer.forward(&x).unwrap();
    let g = uniform64(rng, y.shape(), -1.0, 1.0);
    let grads = layer.backward(&x, &g).unwrap();

    let loss = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>| {
        let l = Conv2D::new(c, out, k, padding, wt.clone(), b.clone()).unwrap();
        probe_loss(&l.forward(x).unwrap(), &g)
    };
    let nx = numeric_grad(x.data(), STEP, |v| loss(&tensor_like(&x, v), &wt, &b));
    let nw = numeric_grad(wt.data(), STEP, |v| loss(&x, &tensor_like(&wt, v), &b));
    let nb = numeric_grad(b.data(), STEP, |v| loss(&x, &wt, &tensor_like(&b, v)));
    max_rel_err(grads.grad_x.data(), &nx, FLOOR)
        .max(max_rel_err(grads.grad_w.data(), &nw, FLOOR))
        .max(max_rel_err(grads.grad_b.data(), &nb, FLOOR))
}

pub fn dense(rng: &mut SeededRng, input_shape: &[usize], out: usize) -> f64 {
    let n: usize = input_shape.iter().product();
    let x = uniform64(rng, input_shape, -1.0, 1.0);
    let wt = uniform64(rng, &[n, out], -0.5, 0.5);
    let b = uniform64(rng, &[out], -0.5, 0.5);
    let layer = Dense::new(n, out, wt.clone(), b.clone()).unwrap();
    let g = uniform64(rng, &[out], -1.0, 1.0);
    let grads = layer.backward(&x, &g).unwrap();

    let loss = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>| {
        let l = Dense::new(n, out, wt.clone(), b.clone()).unwrap();
        probe_loss(&l.forward(x).unwrap(), &g)
    };
    let nx = numeric_grad(x.data(), STEP, |v| loss(&tensor_like(&x, v), &wt, &b));
    let nw = numeric_grad(wt.data(), STEP, |v| loss(&x, &tensor_like(&wt, v), &b));
    let nb = numeric_grad(b.data(), STEP, |v| loss(&x, &wt, &tensor_like(&b, v)));
    max_rel_err(grads.grad_x.data(), &nx, FLOOR)
        .max(max_rel_err(grads.grad_w.data(), &nw, FLOOR))
        .max(max_rel_err(grads.grad_b.data(), &nb, FLOOR))
}

/// Inputs are a shuffled ladder with spacing 0.01, so no window holds a
/// near-tie that a finite step could flip.
pub fn maxpool(rng: &mut SeededRng, h: usize, w: usize, c: usize) -> f64 {
    let mut values: Vec<f64> = (0..h * w * c).map(|i| i as f64 * 0.01 - 1.0).collect();
    rng.shuffle(&mut values);
    let x = Tensor::new(vec![h, w, c], values).unwrap();
    let (y, mask) = MaxPool2D::forward(&x).unwrap();
    let g = uniform64(rng, y.shape(), -1.0, 1.0);
    let gx = MaxPool2D::backward(&mask, &g).unwrap();
    let nx = numeric_grad(x.data(), STEP, |v| {
        probe_loss(&MaxPool2D::forward(&tensor_like(&x, v)).unwrap().0, &g)
    });
    max_rel_err(gx.data(), &nx, FLOOR)
}

/// Inputs are kept at least 0.05 away from the kink at zero.
pub fn relu_check(rng: &mut SeededRng, len: usize) -> f64 {
    let x = Tensor::from_fn(vec![len], |_| {
        let m = rng.uniform_f64(0.05, 1.0);
        if rng.bernoulli(0.5) {
            m
        } else {
            -m
        }
    });
    let g = uniform64(rng, &[len], -1.0, 1.0);
    let gx = relu_backward(&x, &g).unwrap();
    let nx = numeric_grad(x.data(), STEP, |v| {
        probe_loss(&relu(&tensor_like(&x, v)), &g)
    });
    max_rel_err(gx.data(), &nx, FLOOR)
}

pub fn softmax_ce(rng: &mut SeededRng, n: usize, classes: usize) -> f64 {
    let logits = uniform64(rng, &[n, classes], -3.0, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
    let analytic = softmax_cross_entropy(&logits, &labels).unwrap().grad_logits;
    let nx = numeric_grad(logits.data(), STEP, |v| {
        softmax_cross_entropy(&tensor_like(&logits, v), &labels)
            .unwrap()
            .loss
    });
    max_rel_err(analytic.data(), &nx, FLOOR)
}

/// conv(same) -> relu -> conv(valid) -> relu -> pool -> dense -> softmax-CE,
/// checked end to end against the input and first-layer weights.
pub fn chain(rng: &mut SeededRng) -> f64 {
    let x = uniform64(rng, &[6, 6, 2], -1.0, 1.0);
    let c1 = Conv2D::new(
        2,
        3,
        3,
        Padding::Same,
        uniform64(rng, &[3, 3, 2, 3], -0.5, 0.5),
        uniform64(rng, &[3], 0.1, 0.3),
    )
    .unwrap();
    let c2 = Conv2D::new(
        3,
        2,
        3,
        Padding::Valid,
        uniform64(rng, &[3, 3, 3, 2], -0.5, 0.5),
        uniform64(rng, &[2], 0.1, 0.3),
    )
    .unwrap();
    let d = Dense::new(
        8,
        4,
        uniform64(rng, &[8, 4], -0.5, 0.5),
        uniform64(rng, &[4], -0.1, 0.1),
    )
    .unwrap();
    let label = [2usize];

    let forward = |x: &Tensor<f64>, c1: &Conv2D<f64>| -> f64 {
        let a = relu(&c1.forward(x).unwrap());
        let b = relu(&c2.forward(&a).unwrap());
        let (p, _) = MaxPool2D::forward(&b).unwrap();
        let z = d.forward(&p).unwrap().reshape([1, 4]).unwrap();
        softmax_cross_entropy(&z, &label).unwrap().loss
    };

    let z1 = c1.forward(&x).unwrap();
    let a1 = relu(&z1);
    let z2 = c2.forward(&a1).unwrap();
    let a2 = relu(&z2);
    let (p, mask) = MaxPool2D::forward(&a2).unwrap();
    let logits = d.forward(&p).unwrap().reshape([1, 4]).unwrap();
    let gl = softmax_cross_entropy(&logits, &label)
        .unwrap()
        .grad_logits
        .reshape([4])
        .unwrap();
    let gp = d
        .backward(&p, &gl)
        .unwrap()
        .grad_x
        .reshape(p.shape().to_vec())
        .unwrap();
    let ga2 = MaxPool2D::backward(&mask, &gp).unwrap();
    let gz2 = relu_backward(&z2, &ga2).unwrap();
    let ga1 = c2.backward(&a1, &gz2).unwrap().grad_x;
    let gz1 = relu_backward(&z1, &ga1).unwrap();
    let g1 = c1.backward(&x, &gz1).unwrap();

    let nx = numeric_grad(x.data(), STEP, |v| forward(&tensor_like(&x, v), &c1));
    let nw = numeric_grad(c1.weights.data(), STEP, |v| {
        let mut c = c1.clone();
        c.weights = tensor_like(&c1.weights, v);
        forward(&x, &c)
    });
    max_rel_err(g1.grad_x.data(), &nx, FLOOR).max(max_rel_err(g1.grad_w.data(), &nw, FLOOR))
}

/// Every layer kind over several shapes; returns `(kind, worst error)`.
pub fn all_layers(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = SeededRng::new(seed);
    let mut conv_same = 0.0f64;
    let mut conv_valid = 0.0f64;
    for (h, w, c, out, k) in [
        (5, 5, 2, 3, 3),
        (6, 4, 3, 2, 1),
        (7, 6, 2, 2, 5),
        (5, 6, 1, 3, 2),
        (6, 6, 2, 2, 4),
    ] {
        conv_same = conv_same.max(conv(&mut rng, h, w, c, out, k, Padding::Same));
        conv_valid = conv_valid.max(conv(&mut rng, h, w, c, out, k, Padding::Valid));
    }
    let dense_err = dense(&mut rng, &[7], 4).max(dense(&mut rng, &[2, 3, 2], 5));
    let pool_err = maxpool(&mut rng, 4, 6, 2).max(maxpool(&mut rng, 5, 7, 3));
    let relu_err = relu_check(&mut rng, 40);
    let ce_err = softmax_ce(&mut rng, 4, 6).max(softmax_ce(&mut rng, 1, 38));
    let chain_err = chain(&mut rng);
    vec![
        ("conv same", conv_same),
        ("conv valid", conv_valid),
        ("dense", dense_err),
        ("maxpool", pool_err),
        ("relu", relu_err),
        ("softmax cross-entropy", ce_err),
        ("composed chain", chain_err),
    ]
}
