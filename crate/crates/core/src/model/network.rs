use rayon::prelude::*;

use super::spec::{ArchConfig, LayerKind, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::layers::{
    argmax, relu, relu_backward, Conv2D, Dense, Dropout, DropoutMask, MaxPool2D, Mode, PoolMask,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// A layer with its weights.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv2D),
    Relu,
    MaxPool,
    Dropout(Dropout),
    Flatten,
    Dense(Dense),
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(c) => LayerKind::Conv {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                padding: c.padding,
            },
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool => LayerKind::MaxPool,
            Layer::Dropout(d) => LayerKind::Dropout { rate: d.rate() },
            Layer::Flatten => LayerKind::Flatten,
            Layer::Dense(d) => LayerKind::Dense {
                in_features: d.in_features,
                out_features: d.out_features,
            },
            Layer::Softmax => LayerKind::Softmax,
        }
    }

    /// Trainable parameters; zero for pooling, dropout, flatten and
    /// activations.
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.param_count(),
            Layer::Dense(d) => d.param_count(),
            _ => 0,
        }
    }

    fn zeros(kind: &LayerKind) -> Result<Self> {
        Ok(match *kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => Layer::Conv(Conv2D::zeros(in_channels, out_channels, kernel, padding)),
            LayerKind::Relu => Layer::Relu,
            LayerKind::MaxPool => Layer::MaxPool,
            LayerKind::Dropout { rate } => Layer::Dropout(Dropout::new(rate)?),
            LayerKind::Flatten => Layer::Flatten,
            LayerKind::Dense {
                in_features,
                out_features,
            } => Layer::Dense(Dense::zeros(in_features, out_features)),
            LayerKind::Softmax => Layer::Softmax,
        })
    }

    fn he_init(kind: &LayerKind, rng: &mut SeededRng) -> Result<Self> {
        Ok(match *kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => Layer::Conv(Conv2D::he_init(
                in_channels,
                out_channels,
                kernel,
                padding,
                rng,
            )?),
            LayerKind::Dense {
                in_features,
                out_features,
            } => Layer::Dense(Dense::he_init(in_features, out_features, rng)?),
            ref other => Layer::zeros(other)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedLayer {
    pub name: String,
    pub layer: Layer,
}

/// Per-layer state kept by a train-mode forward pass for backprop.
#[derive(Debug)]
enum LayerCache {
    Input(Tensor),
    Pool(PoolMask),
    Dropout(DropoutMask),
    Shape(Vec<usize>),
    Nothing,
}

/// Activations retained from one sample's forward pass.
#[derive(Debug)]
pub struct SampleCache {
    layers: Vec<LayerCache>,
}

/// Result of a batched forward pass.
#[derive(Debug)]
pub struct ForwardOutput {
    /// `[N, classes]`, each row summing to 1.
    pub probabilities: Tensor,
    /// `[N, classes]` pre-softmax scores.
    pub logits: Tensor,
    /// Present only in train mode.
    pub caches: Option<Vec<SampleCache>>,
}

/// Gradients for every parameter tensor, in [`Network::parameters`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::shape("gradient sets have different lengths"));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// Loss, gradients and predictions for one optimisation step.
#[derive(Debug)]
pub struct StepOutcome {
    pub loss: f32,
    pub gradients: Gradients,
    /// Argmax class per sample.
    pub predictions: Vec<usize>,
}

/// An ordered stack of layers with weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: [usize; 3],
    class_count: usize,
    layers: Vec<NamedLayer>,
}

// Upper bound on gradient memory held at once while samples of a batch are
// processed in parallel. Results never depend on it: per-sample gradients
// are always summed in sample order.
const GRADIENT_BUDGET_BYTES: usize = 1 << 29;

impl Network {
    /// He-normal weights, zero biases.
    pub fn from_spec(spec: &NetworkSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.layer_shapes()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                Ok(NamedLayer {
                    name: l.name.clone(),
                    layer: Layer::he_init(&l.kind, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            input_shape: spec.input_shape,
            class_count: spec.class_count,
            layers,
        })
    }

    /// All-zero weights; used when loading serialized parameters.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.layer_shapes()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                Ok(NamedLayer {
                    name: l.name.clone(),
                    layer: Layer::zeros(&l.kind)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            input_shape: spec.input_shape,
            class_count: spec.class_count,
            layers,
        })
    }

    pub fn build(arch: &ArchConfig, rng: &mut SeededRng) -> Result<Self> {
        Self::from_spec(&arch.spec()?, rng)
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            input_shape: self.input_shape,
            class_count: self.class_count,
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpec {
                    name: l.name.clone(),
                    kind: l.layer.kind(),
                })
                .collect(),
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn layers(&self) -> &[NamedLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [NamedLayer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.layer.param_count()).sum()
    }

    /// Parameter tensors in network order: weights then bias per layer.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match &l.layer {
                Layer::Conv(c) => out.extend([&c.weights, &c.bias]),
                Layer::Dense(d) => out.extend([&d.weights, &d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match &mut l.layer {
                Layer::Conv(c) => out.extend([&mut c.weights, &mut c.bias]),
                Layer::Dense(d) => out.extend([&mut d.weights, &mut d.bias]),
                _ => {}
            }
        }
        out
    }

    /// Zero gradients shaped like the parameters.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self
                .parameters()
                .into_iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect(),
        }
    }

    /// Copy with dropout layers removed, for inference.
    pub fn without_dropout(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .filter(|l| !matches!(l.layer, Layer::Dropout(_)))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Set every dropout layer's rate.
    pub fn set_dropout_rates(&mut self, conv_rate: f32, dense_rate: f32) -> Result<()> {
        let mut seen_flatten = false;
        for l in &mut self.layers {
            match l.layer {
                Layer::Flatten => seen_flatten = true,
                Layer::Dropout(ref mut d) => {
                    *d = Dropout::new(if seen_flatten { dense_rate } else { conv_rate })?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn check_sample(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::shape(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    fn batch_dims(&self, batch: &Tensor) -> Result<usize> {
        match batch.shape() {
            [n, rest @ ..] if rest == self.input_shape => Ok(*n),
            other => Err(Error::shape(format!(
                "network expects a batch [N, {}, {}, {}], got {other:?}",
                self.input_shape[0], self.input_shape[1], self.input_shape[2]
            ))),
        }
    }

    /// Logits for one `[H, W, C]` sample, with a backprop cache in train mode.
    fn forward_sample(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<(Tensor, Option<SampleCache>)> {
        self.check_sample(x)?;
        let keep = mode == Mode::Train;
        let mut caches = Vec::new();
        let mut act = x.clone();
        for l in &self.layers {
            let (next, cache) = match &l.layer {
                Layer::Conv(c) => (c.forward(&act)?, LayerCache::Input(act)),
                Layer::Dense(d) => (d.forward(&act)?, LayerCache::Input(act)),
                Layer::Relu => (relu(&act), LayerCache::Input(act)),
                Layer::MaxPool => {
                    let (y, mask) = MaxPool2D::forward(&act)?;
                    (y, LayerCache::Pool(mask))
                }
                Layer::Dropout(d) => {
                    let (y, mask) = d.apply(&act, mode, rng);
                    (y, LayerCache::Dropout(mask))
                }
                Layer::Flatten => {
                    let shape = act.shape().to_vec();
                    let n = act.len();
                    (act.reshape([n])?, LayerCache::Shape(shape))
                }
                // logits are returned; softmax is applied by the caller
                Layer::Softmax => (act, LayerCache::Nothing),
            };
            act = next;
            if keep {
                caches.push(cache);
            }
        }
        Ok((act, keep.then_some(SampleCache { layers: caches })))
    }

    /// Parameter gradients for one sample given `dL/dlogits`.
    fn backward_sample(&self, cache: SampleCache, grad_logits: Tensor) -> Result<Gradients> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::shape("cache does not belong to this network"));
        }
        let mut grads: Vec<Tensor> = Vec::new();
        let mut g = grad_logits;
        for (l, c) in self.layers.iter().zip(cache.layers).rev() {
            g = match (&l.layer, c) {
                (Layer::Softmax, _) => g,
                (Layer::Conv(conv), LayerCache::Input(x)) => {
                    let p = conv.backward(&x, &g)?;
                    grads.push(p.grad_b);
                    grads.push(p.grad_w);
                    p.grad_x
                }
                (Layer::Dense(dense), LayerCache::Input(x)) => {
                    let p = dense.backward(&x, &g)?;
                    grads.push(p.grad_b);
                    grads.push(p.grad_w);
                    p.grad_x
                }
                (Layer::Relu, LayerCache::Input(x)) => relu_backward(&x, &g)?,
                (Layer::MaxPool, LayerCache::Pool(mask)) => MaxPool2D::backward(&mask, &g)?,
                (Layer::Dropout(_), LayerCache::Dropout(mask)) => Dropout::backward(&mask, &g)?,
                (Layer::Flatten, LayerCache::Shape(shape)) => g.reshape(shape)?,
                (_, _) => return Err(Error::shape(format!("cache mismatch at layer {}", l.name))),
            };
        }
        grads.reverse();
        Ok(Gradients { tensors: grads })
    }

    /// Batched forward pass over `[N, H, W, C]`. Samples run in parallel;
    /// in train mode each sample draws dropout masks from its own generator
    /// split from `rng` in sample order.
    pub fn forward(
        &self,
        batch: &Tensor,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<ForwardOutput> {
        let n = self.batch_dims(batch)?;
        let rngs: Vec<SeededRng> = (0..n).map(|_| rng.split()).collect();
        let outputs = rngs
            .into_par_iter()
            .enumerate()
            .map(|(i, mut r)| self.forward_sample(&batch.index_axis0(i)?, mode, &mut r))
            .collect::<Result<Vec<_>>>()?;
        let mut logits = Vec::with_capacity(n * self.class_count);
        let mut caches = Vec::with_capacity(n);
        for (row, cache) in outputs {
            logits.extend_from_slice(row.data());
            caches.extend(cache);
        }
        let logits = Tensor::new(vec![n, self.class_count], logits)?;
        Ok(ForwardOutput {
            probabilities: crate::layers::softmax_rows(&logits)?,
            logits,
            caches: (mode == Mode::Train).then_some(caches),
        })
    }

    /// Eval-mode class probabilities `[N, classes]`.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self
            .forward(batch, Mode::Eval, &mut SeededRng::new(0))?
            .probabilities)
    }

    /// Eval-mode probabilities for one `[H, W, C]` image.
    pub fn predict_one(&self, x: &Tensor) -> Result<Vec<f32>> {
        let (logits, _) = self.forward_sample(x, Mode::Eval, &mut SeededRng::new(0))?;
        let n = logits.len();
        Ok(crate::layers::softmax_rows(&logits.reshape([1, n])?)?.into_data())
    }

    /// Backpropagate cached samples given `dL/dlogits` rows `[N, classes]`.
    pub fn backward(&self, caches: Vec<SampleCache>, grad_logits: &Tensor) -> Result<Gradients> {
        let (n, c) = grad_logits.dims2("grad_logits")?;
        if n != caches.len() || c != self.class_count {
            return Err(Error::shape(format!(
                "grad_logits {:?} for {} cached samples",
                grad_logits.shape(),
                caches.len()
            )));
        }
        let mut total = self.zero_gradients();
        for (i, cache) in caches.into_iter().enumerate() {
            let g = self.backward_sample(cache, grad_logits.index_axis0(i)?)?;
            total.add_assign(&g)?;
        }
        Ok(total)
    }

    /// Train-mode forward, mean softmax cross-entropy, and summed parameter
    /// gradients for one batch. Samples are processed in parallel groups
    /// sized to a memory budget and reduced in sample order, so the result
    /// is identical for any thread count.
    pub fn train_step_gradients(
        &self,
        batch: &Tensor,
        labels: &[usize],
        rng: &mut SeededRng,
    ) -> Result<StepOutcome> {
        let n = self.batch_dims(batch)?;
        if labels.len() != n {
            return Err(Error::arg(format!(
                "{} labels for a batch of {n}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::arg(format!(
                "label {bad} out of range for {} classes",
                self.class_count
            )));
        }
        let rngs: Vec<SeededRng> = (0..n).map(|_| rng.split()).collect();
        let group = (GRADIENT_BUDGET_BYTES / (4 * self.param_count().max(1))).clamp(1, 32);
        let scale = 1.0 / n as f64;

        let mut total = self.zero_gradients();
        let mut loss = 0.0f64;
        let mut predictions = Vec::with_capacity(n);
        let indexed: Vec<(usize, SeededRng)> = rngs.into_iter().enumerate().collect();
        for chunk in indexed.chunks(group) {
            let results = chunk
                .par_iter()
                .map(|(i, r)| {
                    let mut r = r.clone();
                    let x = batch.index_axis0(*i)?;
                    let (logits, cache) = self.forward_sample(&x, Mode::Train, &mut r)?;
                    let (row_loss, grad) =
                        crate::layers::row_loss_and_grad(logits.data(), labels[*i], scale);
                    let grads = self.backward_sample(
                        cache.expect("train mode keeps a cache"),
                        Tensor::new(vec![self.class_count], grad)?,
                    )?;
                    Ok((row_loss, argmax(logits.data()), grads))
                })
                .collect::<Result<Vec<_>>>()?;
            for (row_loss, pred, grads) in results {
                loss += row_loss;
                predictions.push(pred);
                total.add_assign(&grads)?;
            }
        }
        Ok(StepOutcome {
            loss: (loss * scale) as f32,
            gradients: total,
            predictions,
        })
    }

    /// FNV-1a over the bit patterns of all parameters.
    pub fn weights_checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for t in self.parameters() {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// The full 38-class, 256x256 network with He-initialised weights. Layer
/// names follow the reference summary table, whose final classifier is
/// listed as `Dense_1`.
pub fn build_paper_network(rng: &mut SeededRng) -> Result<Network> {
    let mut net = Network::build(&ArchConfig::paper(), rng)?;
    if let Some(last_dense) = net
        .layers
        .iter_mut()
        .rev()
        .find(|l| matches!(l.layer, Layer::Dense(_)))
    {
        last_dense.name = "Dense_1".to_string();
    }
    Ok(net)
}
