//! Forward and backward passes for every layer kind in the network:
//! convolution, ReLU, 2x2 max-pooling, dense, inverted dropout, and the
//! softmax cross-entropy loss.
//!
//! Layers are generic over [`Scalar`] so the gradient-check harness can run
//! them in f64; training and inference use f32.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{col2im, gemm, he_normal, im2col, MatRef, Padding, Scalar, Tensor};

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Square-kernel, stride-1 convolution over `[H, W, C]` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2D<T = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: Padding,
    /// `[k, k, in, out]`
    pub weights: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

/// Gradients of a parametric layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T = f32> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

impl<T: Scalar> Conv2D<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
        weights: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::arg("convolution dimensions must be positive"));
        }
        let w_shape = [kernel, kernel, in_channels, out_channels];
        if weights.shape() != w_shape {
            return Err(Error::shape(format!(
                "conv weights {:?}, expected {w_shape:?}",
                weights.shape()
            )));
        }
        if bias.shape() != [out_channels] {
            return Err(Error::shape(format!(
                "conv bias {:?}, expected [{out_channels}]",
                bias.shape()
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            padding,
            weights,
            bias,
        })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, padding: Padding) -> Self {
        Self::new(
            in_channels,
            out_channels,
            kernel,
            padding,
            Tensor::zeros([kernel, kernel, in_channels, out_channels]),
            Tensor::zeros([out_channels]),
        )
        .expect("zero-initialised conv is well-formed")
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * (self.kernel * self.kernel * self.in_channels + 1)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let [h, w, c] = *input else {
            return Err(Error::shape(format!(
                "conv input must be [H, W, C], got {input:?}"
            )));
        };
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let (oh, ow) = self.padding.output_dims(h, w, self.kernel)?;
        Ok(vec![oh, ow, self.out_channels])
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        let cols = im2col(x, self.kernel, self.padding)?;
        let rows = out_shape[0] * out_shape[1];
        let mut out = Vec::with_capacity(rows * self.out_channels);
        for _ in 0..rows {
            out.extend_from_slice(self.bias.data());
        }
        gemm(
            T::one(),
            MatRef::new(cols.data(), rows, self.patch_len()),
            MatRef::new(self.weights.data(), self.patch_len(), self.out_channels),
            T::one(),
            &mut out,
        );
        Tensor::new(out_shape, out)
    }

    /// Exact gradients of `sum(grad_out * forward(x))`.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ParamGrads<T>> {
        let out_shape = self.output_shape(x.shape())?;
        if grad_out.shape() != out_shape.as_slice() {
            return Err(Error::shape(format!(
                "conv grad_out {:?}, forward output is {out_shape:?}",
                grad_out.shape()
            )));
        }
        let rows = out_shape[0] * out_shape[1];
        let (p, o) = (self.patch_len(), self.out_channels);
        let cols = im2col(x, self.kernel, self.padding)?;
        let g = MatRef::new(grad_out.data(), rows, o);

        let mut grad_b = vec![T::zero(); o];
        for row in grad_out.data().chunks_exact(o) {
            for (b, &v) in grad_b.iter_mut().zip(row) {
                *b += v;
            }
        }

        let mut grad_w = vec![T::zero(); p * o];
        gemm(
            T::one(),
            MatRef::new(cols.data(), rows, p).t(),
            g,
            T::zero(),
            &mut grad_w,
        );

        let mut grad_cols = vec![T::zero(); rows * p];
        gemm(
            T::one(),
            g,
            MatRef::new(self.weights.data(), p, o).t(),
            T::zero(),
            &mut grad_cols,
        );
        let grad_cols = Tensor::new(vec![rows, p], grad_cols)?;
        let grad_x = col2im(&grad_cols, x.shape(), self.kernel, self.padding)?;

        Ok(ParamGrads {
            grad_x,
            grad_w: Tensor::new(self.weights.shape().to_vec(), grad_w)?,
            grad_b: Tensor::new(vec![o], grad_b)?,
        })
    }
}

impl Conv2D<f32> {
    /// He-normal weights, zero bias.
    pub fn he_init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let fan_in = kernel * kernel * in_channels;
        Self::new(
            in_channels,
            out_channels,
            kernel,
            padding,
            he_normal(rng, [kernel, kernel, in_channels, out_channels], fan_in),
            Tensor::zeros([out_channels]),
        )
    }
}

/// Flat input offsets of each pooling window's winner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolMask {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolMask {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Input offset that won output element `i`.
    pub fn winner(&self, i: usize) -> usize {
        self.argmax[i]
    }
}

/// 2x2 max-pooling with stride 2. A trailing odd row or column is dropped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaxPool2D;

impl MaxPool2D {
    pub const WINDOW: usize = 2;

    pub fn output_shape(input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [h, w, c] if h >= 2 && w >= 2 => Ok(vec![h / 2, w / 2, c]),
            _ => Err(Error::shape(format!(
                "max-pool needs [H, W, C] with H, W >= 2, got {input:?}"
            ))),
        }
    }

    /// Ties go to the first maximum in row-major window order.
    pub fn forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolMask)> {
        let out_shape = Self::output_shape(x.shape())?;
        let (w, c) = (x.shape()[1], x.shape()[2]);
        let (oh, ow) = (out_shape[0], out_shape[1]);
        let src = x.data();
        let mut out = Vec::with_capacity(oh * ow * c);
        let mut argmax = Vec::with_capacity(oh * ow * c);
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let at = |dy: usize, dx: usize| ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    let mut best = at(0, 0);
                    for idx in [at(0, 1), at(1, 0), at(1, 1)] {
                        if src[idx] > src[best] || (src[idx].is_nan() && !src[best].is_nan()) {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        Ok((
            Tensor::new(out_shape, out)?,
            PoolMask {
                input_shape: x.shape().to_vec(),
                argmax,
            },
        ))
    }

    /// Route each output gradient to its window winner.
    pub fn backward<T: Scalar>(mask: &PoolMask, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let expected = Self::output_shape(&mask.input_shape)?;
        if grad_out.shape() != expected.as_slice() {
            return Err(Error::shape(format!(
                "max-pool grad_out {:?}, expected {expected:?}",
                grad_out.shape()
            )));
        }
        let mut grad_x = Tensor::zeros(mask.input_shape.clone());
        let gx = grad_x.data_mut();
        for (&idx, &g) in mask.argmax.iter().zip(grad_out.data()) {
            gx[idx] += g;
        }
        Ok(grad_x)
    }
}

/// Fully connected layer: `out = W^T x + b` with `W` stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T = f32> {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(
        in_features: usize,
        out_features: usize,
        weights: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self> {
        if weights.shape() != [in_features, out_features] {
            return Err(Error::shape(format!(
                "dense weights {:?}, expected [{in_features}, {out_features}]",
                weights.shape()
            )));
        }
        if bias.shape() != [out_features] {
            return Err(Error::shape(format!(
                "dense bias {:?}, expected [{out_features}]",
                bias.shape()
            )));
        }
        Ok(Self {
            in_features,
            out_features,
            weights,
            bias,
        })
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self::new(
            in_features,
            out_features,
            Tensor::zeros([in_features, out_features]),
            Tensor::zeros([out_features]),
        )
        .expect("zero-initialised dense is well-formed")
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.len() != self.in_features {
            return Err(Error::shape(format!(
                "dense expects {} inputs, got {:?}",
                self.in_features,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut out = self.bias.data().to_vec();
        gemm(
            T::one(),
            MatRef::new(x.data(), 1, self.in_features),
            MatRef::new(self.weights.data(), self.in_features, self.out_features),
            T::one(),
            &mut out,
        );
        Tensor::new(vec![self.out_features], out)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ParamGrads<T>> {
        self.check_input(x)?;
        if grad_out.len() != self.out_features {
            return Err(Error::shape(format!(
                "dense grad_out {:?}, expected [{}]",
                grad_out.shape(),
                self.out_features
            )));
        }
        let (i, o) = (self.in_features, self.out_features);
        let g = MatRef::new(grad_out.data(), 1, o);

        let mut grad_w = vec![T::zero(); i * o];
        gemm(
            T::one(),
            MatRef::new(x.data(), 1, i).t(),
            g,
            T::zero(),
            &mut grad_w,
        );

        let mut grad_x = vec![T::zero(); i];
        gemm(
            T::one(),
            g,
            MatRef::new(self.weights.data(), i, o).t(),
            T::zero(),
            &mut grad_x,
        );

        Ok(ParamGrads {
            grad_x: Tensor::new(x.shape().to_vec(), grad_x)?,
            grad_w: Tensor::new(vec![i, o], grad_w)?,
            grad_b: Tensor::new(vec![o], grad_out.data().to_vec())?,
        })
    }
}

impl Dense<f32> {
    pub fn he_init(in_features: usize, out_features: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::new(
            in_features,
            out_features,
            he_normal(rng, [in_features, out_features], in_features),
            Tensor::zeros([out_features]),
        )
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v <= T::zero() { T::zero() } else { v })
}

/// Passes gradient where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "relu grad_out {:?} vs input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train
/// time so evaluation needs no rescaling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    rate: f32,
}

/// Per-element multipliers applied by a dropout forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum DropoutMask<T = f32> {
    /// Every element kept unscaled (eval mode or rate 0).
    Full,
    Scaled(Vec<T>),
}

impl Dropout {
    pub fn new(rate: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::arg(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f32 {
        self.rate
    }

    pub fn apply<T: Scalar>(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> (Tensor<T>, DropoutMask<T>) {
        if mode == Mode::Eval || self.rate == 0.0 {
            return (x.clone(), DropoutMask::Full);
        }
        let keep = 1.0 - self.rate as f64;
        let scale = T::of(1.0 / keep);
        let mask: Vec<T> = (0..x.len())
            .map(|_| {
                if rng.bernoulli(keep) {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        (
            Tensor::new(x.shape().to_vec(), out).expect("same shape as input"),
            DropoutMask::Scaled(mask),
        )
    }

    pub fn backward<T: Scalar>(mask: &DropoutMask<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match mask {
            DropoutMask::Full => Ok(grad_out.clone()),
            DropoutMask::Scaled(m) => {
                if m.len() != grad_out.len() {
                    return Err(Error::shape(format!(
                        "dropout mask has {} elements, grad_out {:?}",
                        m.len(),
                        grad_out.shape()
                    )));
                }
                let data = grad_out
                    .data()
                    .iter()
                    .zip(m)
                    .map(|(&g, &s)| g * s)
                    .collect();
                Tensor::new(grad_out.shape().to_vec(), data)
            }
        }
    }
}

/// Cross-entropy of one logit row against `label`, and its gradient scaled
/// by `scale`. Computed in f64 with the row maximum subtracted.
pub(crate) fn row_loss_and_grad<T: Scalar>(row: &[T], label: usize, scale: f64) -> (f64, Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max).as_f64();
    let shifted: Vec<f64> = row.iter().map(|&z| z.as_f64() - max).collect();
    let log_sum = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    let grad = shifted
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let p = (s - log_sum).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            T::of((p - target) * scale)
        })
        .collect();
    (log_sum - shifted[label], grad)
}

/// Mean softmax cross-entropy over a batch and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossResult<T = f32> {
    pub loss: T,
    /// `(softmax - onehot) / N`, same shape as the logits.
    pub grad_logits: Tensor<T>,
}

/// Row-wise max-subtracted softmax of `[N, C]` logits.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = logits.dims2("logits")?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(c) {
        out.extend(softmax_row(row));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<f64> = row.iter().map(|&z| (z - max).as_f64().exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| T::of(e / total)).collect()
}

pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<LossResult<T>> {
    let (n, c) = logits.dims2("logits")?;
    if labels.len() != n {
        return Err(Error::arg(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::arg(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(n * c);
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let (loss, g) = row_loss_and_grad(row, label, inv_n);
        total += loss;
        grad.extend(g);
    }
    Ok(LossResult {
        loss: T::of(total * inv_n),
        grad_logits: Tensor::new(vec![n, c], grad)?,
    })
}

/// Index of the largest element (first on ties).
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng_uniform;

    #[test]
    fn conv_param_counts_match_reference_rows() {
        let cases = [
            (3, 32, 3, 896),
            (32, 32, 3, 9248),
            (32, 64, 3, 18496),
            (64, 64, 3, 36928),
            (64, 128, 3, 73856),
            (128, 128, 3, 147584),
            (128, 256, 3, 295168),
            (256, 256, 3, 590080),
            (256, 512, 5, 3277312),
            (512, 512, 5, 6554112),
        ];
        for (i, o, k, want) in cases {
            assert_eq!(
                Conv2D::<f32>::zeros(i, o, k, Padding::Same).param_count(),
                want
            );
        }
        assert_eq!(Dense::<f32>::zeros(12800, 1536).param_count(), 19_662_336);
        assert_eq!(Dense::<f32>::zeros(1536, 38).param_count(), 58_406);
    }

    #[test]
    fn conv_output_shapes() {
        let c = Conv2D::<f32>::zeros(3, 32, 3, Padding::Same);
        assert_eq!(c.output_shape(&[256, 256, 3]).unwrap(), vec![256, 256, 32]);
        let v = Conv2D::<f32>::zeros(32, 32, 3, Padding::Valid);
        assert_eq!(v.output_shape(&[256, 256, 32]).unwrap(), vec![254, 254, 32]);
        assert!(c.output_shape(&[8, 8, 4]).is_err());
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = SeededRng::new(1);
        let x = rng_uniform(&mut rng, [4, 3, 2], -1.0, 1.0).unwrap();
        let w = Tensor::new(vec![1, 1, 2, 2], vec![1., 0., 0., 1.]).unwrap();
        let conv = Conv2D::new(2, 2, 1, Padding::Valid, w, Tensor::zeros([2])).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_ones_direct_sum() {
        let x = Tensor::<f32>::filled([3, 3, 1], 1.0);
        let conv = Conv2D::new(
            1,
            1,
            2,
            Padding::Valid,
            Tensor::filled([2, 2, 1, 1], 1.0),
            Tensor::zeros([1]),
        )
        .unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 1]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_channel_mismatch() {
        let conv = Conv2D::<f32>::zeros(3, 4, 3, Padding::Same);
        assert!(matches!(
            conv.forward(&Tensor::zeros([5, 5, 2])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_backward_zero_and_scalar() {
        let mut rng = SeededRng::new(2);
        let conv = Conv2D::he_init(2, 3, 3, Padding::Same, &mut rng).unwrap();
        let x = rng_uniform(&mut rng, [4, 4, 2], -1.0, 1.0).unwrap();
        let g = conv.backward(&x, &Tensor::zeros([4, 4, 3])).unwrap();
        assert!(g.grad_x.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_w.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_b.data().iter().all(|&v| v == 0.0));

        let conv = Conv2D::new(
            1,
            1,
            1,
            Padding::Valid,
            Tensor::new(vec![1, 1, 1, 1], vec![3.0f32]).unwrap(),
            Tensor::zeros([1]),
        )
        .unwrap();
        let x = Tensor::new(vec![1, 1, 1], vec![2.0f32]).unwrap();
        let go = Tensor::new(vec![1, 1, 1], vec![5.0f32]).unwrap();
        let g = conv.backward(&x, &go).unwrap();
        assert_eq!(g.grad_w.data(), &[10.0]);
        assert_eq!(g.grad_x.data(), &[15.0]);
        assert_eq!(g.grad_b.data(), &[5.0]);
        assert!(conv.backward(&x, &Tensor::zeros([2, 1, 1])).is_err());
    }

    #[test]
    fn maxpool_shapes_and_ties() {
        assert_eq!(
            MaxPool2D::output_shape(&[254, 254, 32]).unwrap(),
            vec![127, 127, 32]
        );
        assert_eq!(
            MaxPool2D::output_shape(&[125, 125, 64]).unwrap(),
            vec![62, 62, 64]
        );
        assert!(MaxPool2D::output_shape(&[1, 4, 1]).is_err());

        let x = Tensor::<f32>::filled([4, 4, 1], 7.0);
        let (y, mask) = MaxPool2D::forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        // first element of each window wins a tie
        assert_eq!(mask.winner(0), 0);
        assert_eq!(mask.winner(1), 2);
        assert_eq!(mask.winner(2), 8);
    }

    #[test]
    fn maxpool_window_and_routing() {
        let x = Tensor::new(vec![2, 2, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, mask) = MaxPool2D::forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(mask.winner(0), 3); // (1, 1)
        let g =
            MaxPool2D::backward(&mask, &Tensor::new(vec![1, 1, 1], vec![2.5f32]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 2.5]);
        let z = MaxPool2D::backward(&mask, &Tensor::<f32>::zeros([1, 1, 1])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(MaxPool2D::backward(&mask, &Tensor::<f32>::zeros([2, 1, 1])).is_err());
    }

    #[test]
    fn dense_cases() {
        let d = Dense::new(
            2,
            2,
            Tensor::new(vec![2, 2], vec![1.0f32, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros([2]),
        )
        .unwrap();
        let x = Tensor::new(vec![2], vec![1.0f32, 2.0]).unwrap();
        assert_eq!(d.forward(&x).unwrap(), x);

        // W = [[1, 2, 3], [4, 5, 6]], b = [1, 0, -1]: x^T W + b = [10, 12, 14]
        let d = Dense::new(
            2,
            3,
            Tensor::new(vec![2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            Tensor::new(vec![3], vec![1.0f32, 0.0, -1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(d.forward(&x).unwrap().data(), &[10.0, 12.0, 14.0]);
        assert!(d.forward(&Tensor::zeros([3])).is_err());

        let g = d.backward(&x, &Tensor::zeros([3])).unwrap();
        assert!(g
            .grad_x
            .data()
            .iter()
            .chain(g.grad_w.data())
            .all(|&v| v == 0.0));

        let s = Dense::new(
            1,
            1,
            Tensor::new(vec![1, 1], vec![4.0f32]).unwrap(),
            Tensor::zeros([1]),
        )
        .unwrap();
        let g = s
            .backward(
                &Tensor::new(vec![1], vec![3.0f32]).unwrap(),
                &Tensor::new(vec![1], vec![0.5f32]).unwrap(),
            )
            .unwrap();
        assert_eq!(g.grad_w.data(), &[1.5]);
        assert_eq!(g.grad_x.data(), &[2.0]);
        assert_eq!(g.grad_b.data(), &[0.5]);
    }

    #[test]
    fn dense_reference_shape() {
        let mut rng = SeededRng::new(0);
        let d = Dense::he_init(12800, 1536, &mut rng).unwrap();
        let y = d.forward(&Tensor::filled([12800], 0.01)).unwrap();
        assert_eq!(y.shape(), &[1536]);
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::new(vec![3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::filled([3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        let pos = Tensor::new(vec![2], vec![0.0f32, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = SeededRng::new(4);
        let x = rng_uniform(&mut rng, [100], -1.0, 1.0).unwrap();
        let d = Dropout::new(0.5).unwrap();
        let (y, m) = d.apply(&x, Mode::Eval, &mut rng);
        assert_eq!(y, x);
        assert_eq!(m, DropoutMask::Full);
        let (y, _) = Dropout::new(0.0).unwrap().apply(&x, Mode::Train, &mut rng);
        assert_eq!(y, x);
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = SeededRng::new(11);
        let x = Tensor::<f32>::filled([100_000], 1.0);
        let (y, mask) = Dropout::new(0.5).unwrap().apply(&x, Mode::Train, &mut rng);
        let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let g = Dropout::backward(&mask, &x).unwrap();
        assert_eq!(g, y);
    }

    #[test]
    fn softmax_ce_uniform_and_stable() {
        let r = softmax_cross_entropy(&Tensor::<f32>::zeros([2, 38]), &[0, 17]).unwrap();
        assert!((r.loss - 38f32.ln()).abs() < 1e-6);
        assert!((38f64.ln() - 3.6376).abs() < 1e-4);

        let mut logits = vec![0.0f32; 38];
        logits[5] = 1000.0;
        let r = softmax_cross_entropy(&Tensor::new(vec![1, 38], logits).unwrap(), &[5]).unwrap();
        assert!(r.loss.abs() < 1e-6 && r.loss.is_finite());
        assert!(r.grad_logits.all_finite());

        assert!(softmax_cross_entropy(&Tensor::<f32>::zeros([1, 38]), &[38]).is_err());
        assert!(softmax_cross_entropy(&Tensor::<f32>::zeros([2, 38]), &[0]).is_err());
    }

    #[test]
    fn softmax_rows_normalise() {
        let mut rng = SeededRng::new(8);
        let logits = rng_uniform(&mut rng, [4, 38], -20.0, 20.0).unwrap();
        let p = softmax_rows(&logits).unwrap();
        for row in p.data().chunks_exact(38) {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn nan_propagates_through_relu_and_pool() {
        let x = Tensor::new(vec![2, 2, 1], vec![1.0f32, f32::NAN, 3.0, -1.0]).unwrap();
        assert!(relu(&x).data()[1].is_nan());
        assert!(MaxPool2D::forward(&x).unwrap().0.data()[0].is_nan());
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
    }
}
