//! Adam optimisation, epoch loops, checkpointing and the per-epoch history.

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::{batches, load_batch, split, AugmentConfig, DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::layers::{argmax, softmax_cross_entropy};
use crate::model::{save_checkpoint, ArchConfig, Gradients, Network};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-7;

// Seed streams; each consumer derives its own generator from the run seed.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_SPLIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_BATCH: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_conv: f32,
    pub dropout_dense: f32,
    pub seed: u64,
    /// `None` trains on the images as decoded.
    pub augment: Option<AugmentConfig>,
    pub train_fraction: f64,
    pub arch: ArchConfig,
    /// Where `best.pldc` and `final.pldc` go; nothing is written when unset.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 15,
            dropout_conv: 0.25,
            dropout_dense: 0.5,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            train_fraction: 0.75,
            arch: ArchConfig::paper(),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::arg(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        for rate in [self.dropout_conv, self.dropout_dense] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::arg(format!(
                    "dropout rate must be in [0, 1), got {rate}"
                )));
            }
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn for_network(net: &Network) -> Self {
        Self::new(net.parameters())
    }
}

/// One bias-corrected Adam update of every parameter tensor.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f32,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} parameter tensors, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape(format!(
                "adam: parameter {:?}, gradient {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let lr = lr as f64;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = g as f64;
            let m_new = ADAM_BETA1 * *m as f64 + (1.0 - ADAM_BETA1) * g;
            let v_new = ADAM_BETA2 * *v as f64 + (1.0 - ADAM_BETA2) * g * g;
            *m = m_new as f32;
            *v = v_new as f32;
            let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + ADAM_EPSILON);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Forward, loss, backward and one Adam update on an in-memory batch.
/// Aborts without touching the weights if the loss or any gradient is not
/// finite.
pub fn train_batch(
    net: &mut Network,
    adam: &mut AdamState,
    inputs: &Tensor,
    labels: &[usize],
    lr: f32,
    rng: &mut SeededRng,
) -> Result<(f32, Vec<usize>)> {
    let step = net.train_step_gradients(inputs, labels, rng)?;
    if !step.loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {}", step.loss)));
    }
    if !step.gradients.all_finite() {
        return Err(Error::NonFinite("non-finite gradient".into()));
    }
    let Gradients { tensors } = step.gradients;
    adam_step(&mut net.parameters_mut(), &tensors, adam, lr)?;
    Ok((step.loss, step.predictions))
}

fn with_batch_context(e: Error, batch: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("batch {batch}: {m}")),
        Error::Shape(m) => Error::Shape(format!("batch {batch}: {m}")),
        other => other,
    }
}

/// One pass over `train_batches`. Returns the loss averaged over batches
/// and the accuracy over all samples, both measured during the pass.
pub fn run_epoch(
    net: &mut Network,
    train_batches: &[Vec<Sample>],
    config: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut SeededRng,
) -> Result<(f32, f32)> {
    let side = net.input_shape()[0];
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut seen = 0usize;
    for (b, samples) in train_batches.iter().enumerate() {
        let mut batch_rng = rng.split();
        let batch = load_batch(samples, side, config.augment.as_ref(), &mut batch_rng)
            .map_err(|e| with_batch_context(e, b))?;
        let (loss, preds) = train_batch(
            net,
            adam,
            &batch.inputs,
            &batch.labels,
            config.learning_rate,
            &mut batch_rng,
        )
        .map_err(|e| with_batch_context(e, b))?;
        loss_sum += loss as f64;
        correct += preds
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
        seen += samples.len();
    }
    if seen == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((
        (loss_sum / train_batches.len() as f64) as f32,
        correct as f32 / seen as f32,
    ))
}

/// Eval-mode loss (mean per sample) and accuracy over `samples`. Weights
/// are not modified. An empty set scores zero on both.
pub fn evaluate_epoch(net: &Network, samples: &[Sample], batch_size: usize) -> Result<(f32, f32)> {
    Ok(evaluate_with_predictions(net, samples, batch_size)?.0)
}

/// Like [`evaluate_epoch`] but also returns the predicted class of every
/// sample, in input order.
pub fn evaluate_with_predictions(
    net: &Network,
    samples: &[Sample],
    batch_size: usize,
) -> Result<((f32, f32), Vec<usize>)> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    if samples.is_empty() {
        return Ok(((0.0, 0.0), Vec::new()));
    }
    let side = net.input_shape()[0];
    let mut loss_sum = 0.0f64;
    let mut predictions = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size) {
        let batch = load_batch(chunk, side, None, &mut SeededRng::new(0))?;
        let out = net.forward(
            &batch.inputs,
            crate::layers::Mode::Eval,
            &mut SeededRng::new(0),
        )?;
        let loss = softmax_cross_entropy(&out.logits, &batch.labels)?;
        loss_sum += loss.loss as f64 * chunk.len() as f64;
        predictions.extend(
            out.logits
                .data()
                .chunks_exact(net.class_count())
                .map(argmax),
        );
    }
    let correct = predictions
        .iter()
        .zip(samples)
        .filter(|(p, s)| **p == s.class_index)
        .count();
    let n = samples.len() as f64;
    Ok((
        ((loss_sum / n) as f32, (correct as f64 / n) as f32),
        predictions,
    ))
}

/// Metrics for one epoch, in the column order of the history file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f32,
    pub accuracy: f32,
    pub val_loss: f32,
    pub val_accuracy: f32,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub network: Network,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch with the highest validation accuracy, if any ran.
    pub best_epoch: Option<usize>,
    pub optimizer_steps: u64,
    pub split_warnings: Vec<String>,
    pub train_samples: Vec<Sample>,
    pub validation_samples: Vec<Sample>,
}

/// Split the manifest, initialise a network and train it for
/// `config.epochs` epochs, recording train and validation metrics after
/// each. Results are a pure function of the manifest and config.
pub fn fit(manifest: &DatasetManifest, config: &TrainConfig) -> Result<FitOutcome> {
    fit_with(manifest, config, |_| {})
}

/// [`fit`] with a callback invoked after every epoch.
pub fn fit_with(
    manifest: &DatasetManifest,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    config.validate()?;
    if manifest.samples.is_empty() {
        return Err(Error::arg("manifest has no samples"));
    }
    if config.arch.class_count != manifest.classes.len() {
        return Err(Error::arg(format!(
            "architecture has {} outputs but the manifest lists {} classes",
            config.arch.class_count,
            manifest.classes.len()
        )));
    }
    let mut arch = config.arch.clone();
    arch.dropout_conv = config.dropout_conv;
    arch.dropout_dense = config.dropout_dense;
    let mut net = Network::build(
        &arch,
        &mut SeededRng::new(derive_seed(config.seed, STREAM_INIT)),
    )?;
    let parts = split(
        &manifest.samples,
        config.train_fraction,
        derive_seed(config.seed, STREAM_SPLIT),
    )?;
    info!(
        "training on {} samples, validating on {}",
        parts.train.len(),
        parts.validation.len()
    );
    if parts.validation.is_empty() {
        warn!("validation set is empty; validation metrics will read 0");
    }

    let mut adam = AdamState::for_network(&net);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f32)> = None;
    for epoch in 1..=config.epochs {
        let order = batches(
            &parts.train,
            config.batch_size,
            derive_seed(derive_seed(config.seed, STREAM_SHUFFLE), epoch as u64),
        )?;
        let mut rng = SeededRng::new(derive_seed(
            derive_seed(config.seed, STREAM_BATCH),
            epoch as u64,
        ));
        let (loss, accuracy) =
            run_epoch(&mut net, &order, config, &mut adam, &mut rng).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, {m}")),
                Error::Shape(m) => Error::Shape(format!("epoch {epoch}, {m}")),
                other => other,
            })?;
        let (val_loss, val_accuracy) = evaluate_epoch(&net, &parts.validation, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            loss,
            accuracy,
            val_loss,
            val_accuracy,
        };
        info!(
            "epoch {epoch}/{}: loss {loss:.4} accuracy {accuracy:.4} val_loss {val_loss:.4} val_accuracy {val_accuracy:.4}",
            config.epochs
        );
        if best.is_none_or(|(_, acc)| val_accuracy > acc) {
            best = Some((epoch, val_accuracy));
            if let Some(dir) = &config.checkpoint_dir {
                save_checkpoint(&net, &dir.join("best.pldc"))?;
            }
        }
        on_epoch(&record);
        history.push(record);
    }
    if let Some(dir) = &config.checkpoint_dir {
        save_checkpoint(&net, &dir.join("final.pldc"))?;
    }
    Ok(FitOutcome {
        network: net,
        history,
        best_epoch: best.map(|(e, _)| e),
        optimizer_steps: adam.t,
        split_warnings: parts.warnings,
        train_samples: parts.train,
        validation_samples: parts.validation,
    })
}

pub const HISTORY_HEADER: [&str; 5] = ["epoch", "loss", "accuracy", "val_loss", "val_accuracy"];

pub fn write_history_csv<W: std::io::Write>(records: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER)?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.4}", r.loss),
            format!("{:.4}", r.accuracy),
            format!("{:.4}", r.val_loss),
            format!("{:.4}", r.val_accuracy),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Header `epoch,loss,accuracy,val_loss,val_accuracy`, values to 4 decimals.
pub fn export_history_csv(records: &[EpochRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history_csv(records, file)
}

pub fn read_history_csv<R: std::io::Read>(input: R) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != HISTORY_HEADER {
        return Err(Error::arg(format!("unexpected history header {header:?}")));
    }
    r.deserialize().map(|row| Ok(row?)).collect()
}

pub fn parse_history_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_history_csv(file)
}
