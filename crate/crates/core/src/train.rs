//! Mini-batch SGD with momentum over the trainable parameter subset, plus
//! evaluation into a confusion matrix.

use std::fmt::Write as _;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment_indexed, AugmentParams, LabeledDataset, RasterImage};
use crate::error::{shape_err, Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{argmax, Model, ParamMap};
use crate::nn;
use crate::rng::{indexed_seed, stream_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Mini-batches per epoch.
    pub steps_per_epoch: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            steps_per_epoch: 250,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::InvalidArgument("batch_size and steps_per_epoch must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// `v ← momentum·v − lr·g; p ← p + v` for trainable entries. Frozen
/// parameters and their velocities are left untouched.
pub fn sgd_step(
    params: &mut ParamMap,
    grads: &ParamMap,
    velocity: &mut ParamMap,
    learning_rate: f32,
    momentum: f32,
    trainable: &IndexMap<String, bool>,
) -> Result<()> {
    for (name, p) in params.iter_mut() {
        if !trainable.get(name).copied().unwrap_or(false) {
            continue;
        }
        let g = grads
            .get(name)
            .ok_or_else(|| shape_err(format!("no gradient for trainable parameter {name:?}")))?;
        let v = velocity
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        if !g.same_shape(p) || !v.same_shape(p) {
            return Err(shape_err(format!(
                "parameter {name:?} has shape {:?} but gradient {:?} / velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = momentum * *vv - learning_rate * gv;
            *pv += *vv;
        }
    }
    Ok(())
}

/// Momentum optimizer bound to one model.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub learning_rate: f32,
    pub momentum: f32,
    velocity: ParamMap,
}

impl Sgd {
    pub fn new(learning_rate: f32, momentum: f32) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: ParamMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &ParamMap) -> Result<()> {
        let trainable = model.trainable().clone();
        sgd_step(
            model.params_mut(),
            grads,
            &mut self.velocity,
            self.learning_rate,
            self.momentum,
            &trainable,
        )
    }
}

/// Stacks `[3, H, W]` images into an NCHW batch.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a RasterImage>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims = None;
    let mut n = 0;
    for img in images {
        let d = (img.height, img.width);
        if *dims.get_or_insert(d) != d {
            return Err(shape_err("images in a batch must share one size"));
        }
        data.extend_from_slice(img.to_tensor().data());
        n += 1;
    }
    let (h, w) = dims.ok_or(Error::EmptyDataset)?;
    Tensor::new([n, 3, h, w], data)
}

/// Loss, correct count and gradients for one labelled batch.
pub struct BatchOutcome {
    pub loss: f32,
    pub correct: usize,
    pub grads: ParamMap,
}

pub fn batch_gradients(model: &Model, batch: &Tensor, targets: &[usize]) -> Result<BatchOutcome> {
    let (trace, acts) = model.forward_train(batch)?;
    let loss = nn::cross_entropy(&trace.probs, targets)?;
    let c = trace.probs.shape()[1];
    let correct = trace
        .probs
        .data()
        .chunks_exact(c)
        .zip(targets)
        .filter(|(row, &t)| argmax(row) == t)
        .count();
    let d_logits = nn::softmax_cross_entropy_backward(&trace.probs, targets)?;
    let grads = model.backward(acts, &d_logits)?;
    Ok(BatchOutcome { loss, correct, grads })
}

fn check_dataset(model: &Model, ds: &LabeledDataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = model.spec();
    if ds.num_classes() != spec.num_classes {
        return Err(Error::ClassMismatch {
            model: spec.num_classes,
            dataset: ds.num_classes(),
        });
    }
    let side = spec.input_size;
    if let Some(bad) = ds.items.iter().find(|it| it.image.width != side || it.image.height != side) {
        return Err(shape_err(format!(
            "model expects {side}x{side} images, dataset has {}x{}",
            bad.image.width, bad.image.height
        )));
    }
    Ok(())
}

/// Reshuffled passes over the training indices. Each epoch restarts from a
/// fresh permutation seeded by `(seed, epoch, pass)`.
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
    seed: u64,
    epoch: usize,
    pass: u64,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            cursor: n,
            seed: stream_seed(seed, b"epoch-order"),
            epoch: 0,
            pass: 0,
        }
    }

    fn start_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.pass = 0;
        self.cursor = self.order.len();
    }

    fn next(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.sort_unstable();
            let s = indexed_seed(indexed_seed(self.seed, self.epoch as u64), self.pass);
            self.order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
            self.pass += 1;
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }
}

pub fn train(
    model: &mut Model,
    train_ds: &LabeledDataset,
    val_ds: &LabeledDataset,
    aug: &AugmentParams,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    train_with(model, train_ds, val_ds, aug, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    model: &mut Model,
    train_ds: &LabeledDataset,
    val_ds: &LabeledDataset,
    aug: &AugmentParams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    aug.validate()?;
    check_dataset(model, train_ds)?;
    check_dataset(model, val_ds)?;
    let mut history = TrainHistory::default();
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut sampler = Sampler::new(train_ds.len(), cfg.seed);
    let mut draw: u64 = 0;
    for epoch in 0..cfg.epochs {
        sampler.start_epoch(epoch);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for _ in 0..cfg.steps_per_epoch {
            let mut images = Vec::with_capacity(cfg.batch_size);
            let mut targets = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let item = &train_ds.items[sampler.next()];
                images.push(augment_indexed(&item.image, aug, draw));
                targets.push(item.label);
                draw += 1;
            }
            let batch = stack_images(&images)?;
            let out = batch_gradients(model, &batch, &targets)?;
            opt.step(model, &out.grads)?;
            loss_sum += out.loss as f64 * targets.len() as f64;
            correct += out.correct;
            seen += targets.len();
        }
        let (val_loss, val_accuracy) = evaluate_loss(model, val_ds, cfg.batch_size)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            val_loss,
            val_accuracy,
        };
        on_epoch(&record);
        history.records.push(record);
    }
    Ok(history)
}

/// Mean cross-entropy and accuracy on un-augmented images.
pub fn evaluate_loss(model: &Model, ds: &LabeledDataset, batch_size: usize) -> Result<(f64, f64)> {
    check_dataset(model, ds)?;
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for chunk in ds.items.chunks(batch_size.max(1)) {
        let batch = stack_images(chunk.iter().map(|it| &it.image))?;
        let targets: Vec<usize> = chunk.iter().map(|it| it.label).collect();
        let trace = model.forward(&batch)?;
        loss += nn::cross_entropy(&trace.probs, &targets)? as f64 * targets.len() as f64;
        let c = trace.probs.shape()[1];
        correct += trace
            .probs
            .data()
            .chunks_exact(c)
            .zip(&targets)
            .filter(|(row, &t)| argmax(row) == t)
            .count();
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

pub fn predict_all(model: &Model, ds: &LabeledDataset, batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ds.len());
    for chunk in ds.items.chunks(batch_size.max(1)) {
        let batch = stack_images(chunk.iter().map(|it| &it.image))?;
        let trace = model.forward(&batch)?;
        let c = trace.probs.shape()[1];
        out.extend(trace.probs.data().chunks_exact(c).map(argmax));
    }
    Ok(out)
}

/// Confusion matrix of un-augmented predictions, `[true][predicted]`.
pub fn evaluate(model: &Model, test_ds: &LabeledDataset) -> Result<ConfusionMatrix> {
    check_dataset(model, test_ds)?;
    let names: Vec<&str> = test_ds.label_names.iter().map(String::as_str).collect();
    let mut cm = ConfusionMatrix::new(&names);
    for (item, pred) in test_ds.items.iter().zip(predict_all(model, test_ds, 32)?) {
        cm.record(item.label, pred);
    }
    Ok(cm)
}
