//! Categorical cross-entropy, the Adam optimizer, the epoch/step training
//! loop with curve logging, and the finite-difference gradient checker.

use std::io;

use thiserror::Error;

use crate::dataset::{DatasetError, LabeledDataset};
use crate::metrics::argmax_row;
use crate::model::{Gradients, Model, ModelError};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Scalar, Shape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("input error: {0}")]
    Input(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

type Result<T> = std::result::Result<T, TrainError>;

/// One-hot encode class labels into a (B, classes) tensor.
pub fn one_hot<S: Scalar>(labels: &[u8], classes: usize) -> Result<Tensor<S>> {
    if labels.is_empty() {
        return Err(TrainError::Input(
            "cannot one-hot encode zero labels".into(),
        ));
    }
    let mut data = vec![S::ZERO; labels.len() * classes];
    for (i, &label) in labels.iter().enumerate() {
        if label as usize >= classes {
            return Err(TrainError::Input(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        data[i * classes + label as usize] = S::ONE;
    }
    Ok(Tensor::from_vec(
        Shape::new([labels.len(), classes])?,
        data,
    )?)
}

/// Mean categorical cross-entropy: -(1/B) sum_b log(probs[b, target_b]),
/// with probabilities clamped to >= 1e-12 before the log. Every probs row
/// must sum to 1 within 1e-5 and every target row must be exactly one-hot.
pub fn cross_entropy<S: Scalar>(probs: &Tensor<S>, targets: &Tensor<S>) -> Result<f64> {
    if probs.rank() != 2 || probs.shape() != targets.shape() {
        return Err(TrainError::Shape(format!(
            "probs {} and targets {} must be equal rank-2 shapes",
            probs.shape(),
            targets.shape()
        )));
    }
    let (b, classes) = (probs.dims()[0], probs.dims()[1]);
    let mut total = 0.0f64;
    for row in 0..b {
        let p = &probs.data()[row * classes..(row + 1) * classes];
        let t = &targets.data()[row * classes..(row + 1) * classes];
        let mut target_idx = None;
        for (j, &v) in t.iter().enumerate() {
            if v == S::ONE {
                if target_idx.replace(j).is_some() {
                    return Err(TrainError::Input(format!(
                        "target row {row} has multiple ones"
                    )));
                }
            } else if v != S::ZERO {
                return Err(TrainError::Input(format!(
                    "target row {row} is not one-hot (entry {v})"
                )));
            }
        }
        let target_idx =
            target_idx.ok_or_else(|| TrainError::Input(format!("target row {row} has no one")))?;
        let sum: f64 = p.iter().map(|v| v.to_f64()).sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(TrainError::Input(format!(
                "probs row {row} sums to {sum}, not a probability vector"
            )));
        }
        total += -p[target_idx].to_f64().max(1e-12).ln();
    }
    Ok(total / b as f64)
}

/// Adam hyperparameters. Defaults: lr 0.001, beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<S = f32> {
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    t: u64,
    pub hyper: AdamHyper,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(model: &Model<S>, hyper: AdamHyper) -> Self {
        Self::for_params(&model.params(), hyper)
    }

    pub fn for_params(params: &[&Tensor<S>], hyper: AdamHyper) -> Self {
        AdamState {
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().clone()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().clone()))
                .collect(),
            t: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor<S>] {
        &self.m
    }

    /// One Adam update:
    /// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
    /// with bias correction m^ = m/(1-b1^t), v^ = v/(1-b2^t);
    /// param <- param - lr * m^ / (sqrt(v^) + eps).
    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &Gradients<S>) -> Result<()> {
        if params.len() != self.m.len() || grads.tensors.len() != self.m.len() {
            return Err(TrainError::Shape(format!(
                "adam state tracks {} blocks, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.tensors.len()
            )));
        }
        // Validate every block before touching any state, so a shape error
        // never leaves a half-applied update.
        for (i, param) in params.iter().enumerate() {
            let grad = &grads.tensors[i];
            if grad.shape() != param.shape() || self.m[i].shape() != param.shape() {
                return Err(TrainError::Shape(format!(
                    "adam block {i}: param {}, grad {}, state {}",
                    param.shape(),
                    grad.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.t += 1;
        let b1 = self.hyper.beta1;
        let b2 = self.hyper.beta2;
        let bc1 = S::from_f64(1.0 - b1.powi(self.t as i32));
        let bc2 = S::from_f64(1.0 - b2.powi(self.t as i32));
        let (b1s, b2s) = (S::from_f64(b1), S::from_f64(b2));
        let (omb1, omb2) = (S::from_f64(1.0 - b1), S::from_f64(1.0 - b2));
        let lr = S::from_f64(self.hyper.lr);
        let eps = S::from_f64(self.hyper.epsilon);
        for (i, param) in params.iter_mut().enumerate() {
            let grad = &grads.tensors[i];
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = param.data_mut();
            for j in 0..p.len() {
                let g = grad.data()[j];
                m[j] = b1s * m[j] + omb1 * g;
                v[j] = b2s * v[j] + omb2 * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Epoch/step schedule for the training loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Emit a train-metrics row every this many steps (validation rows come
    /// once per epoch regardless).
    pub log_every: usize,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(TrainError::Input("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Input("batch_size must be >= 1".into()));
        }
        if self.log_every < 1 {
            return Err(TrainError::Input("log_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// ceil(train_size / batch_size); the final batch may be partial.
pub fn steps_per_epoch(train_size: usize, batch_size: usize) -> usize {
    train_size.div_ceil(batch_size)
}

/// One logged point of the loss/accuracy curves. Validation fields are
/// filled on the last step of each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// Curve CSV: header `epoch,step,train_loss,train_acc,val_loss,val_acc`,
/// one row per log event, empty validation cells on step rows.
pub fn encode_curves_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("epoch,step,train_loss,train_acc,val_loss,val_acc\n");
    for p in points {
        let vl = p.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let va = p.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.epoch, p.step, p.train_loss, p.train_accuracy, vl, va
        ));
    }
    out
}

pub fn write_curves_csv<W: io::Write>(w: &mut W, points: &[CurvePoint]) -> io::Result<()> {
    w.write_all(encode_curves_csv(points).as_bytes())
}

/// Eval-mode class probabilities for a whole dataset, shape (N, classes).
pub fn predict_probs(model: &Model<f32>, data: &LabeledDataset) -> Result<Tensor<f32>> {
    if data.is_empty() {
        return Err(TrainError::Input("empty dataset".into()));
    }
    let classes = model.classes();
    let n = data.len();
    let mut out = Vec::with_capacity(n * classes);
    let chunk = 256;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let batch = data.batch(&indices)?;
        let probs = model.forward(&batch, false, 0)?;
        out.extend_from_slice(probs.data());
        start = end;
    }
    Ok(Tensor::from_vec(Shape::new([n, classes])?, out)?)
}

/// Mean loss and accuracy of a model over a dataset, in eval mode.
pub fn evaluate(model: &Model<f32>, data: &LabeledDataset) -> Result<(f64, f64)> {
    let probs = predict_probs(model, data)?;
    let classes = model.classes();
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for (i, &label) in data.labels().iter().enumerate() {
        let row = &probs.data()[i * classes..(i + 1) * classes];
        loss += -(row[label as usize] as f64).max(1e-12).ln();
        if argmax_row(row) == label as usize {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn batch_accuracy(probs: &Tensor<f32>, labels: &[u8]) -> f64 {
    let classes = probs.dims()[1];
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax_row(&probs.data()[i * classes..(i + 1) * classes]) == l as usize)
        .count();
    correct as f64 / labels.len() as f64
}

/// Run the epoch/step loop: reshuffle each epoch from the seeded
/// permutation, one Adam update per batch, train metrics every `log_every`
/// steps and validation metrics at each epoch end. Pass an empty `val_set`
/// to skip validation.
pub fn train(
    model: &mut Model<f32>,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    schedule: &TrainSchedule,
    hyper: AdamHyper,
) -> Result<Vec<CurvePoint>> {
    schedule.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Input("empty dataset".into()));
    }
    if schedule.batch_size > train_set.len() {
        return Err(TrainError::Input(format!(
            "batch_size {} exceeds train size {}",
            schedule.batch_size,
            train_set.len()
        )));
    }
    if train_set.classes() != model.classes() {
        return Err(TrainError::Input(format!(
            "dataset has {} classes but model has {}",
            train_set.classes(),
            model.classes()
        )));
    }

    let n = train_set.len();
    let steps = steps_per_epoch(n, schedule.batch_size);
    let dropout_base = derive_seed(schedule.shuffle_seed, 0xd509);
    let mut curve = Vec::new();
    let mut adam = AdamState::new(model, hyper);

    for epoch in 0..schedule.epochs {
        let perm = Rng::new(derive_seed(schedule.shuffle_seed, epoch as u64)).permutation(n);
        for (step, chunk) in perm.chunks(schedule.batch_size).enumerate() {
            let batch = train_set.batch(chunk)?;
            let labels = train_set.gather_labels(chunk);
            let targets = one_hot::<f32>(&labels, model.classes())?;
            let step_seed = derive_seed(dropout_base, (epoch * steps + step) as u64);
            let (probs, trace) = model.forward_trace(&batch, true, step_seed)?;
            let loss = cross_entropy(&probs, &targets)?;
            let acc = batch_accuracy(&probs, &labels);
            let grads = model.backward(&trace, &targets)?;
            adam.step(&mut model.params_mut(), &grads)?;

            let last = step + 1 == steps;
            if (step + 1) % schedule.log_every == 0 || last {
                let (val_loss, val_accuracy) = if last && !val_set.is_empty() {
                    let (vl, va) = evaluate(model, val_set)?;
                    (Some(vl), Some(va))
                } else {
                    (None, None)
                };
                curve.push(CurvePoint {
                    epoch: epoch + 1,
                    step: step + 1,
                    train_loss: loss,
                    train_accuracy: acc,
                    val_loss,
                    val_accuracy,
                });
            }
        }
    }
    Ok(curve)
}

/// |a - n| / max(1e-8, |a| + |n|).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Worst relative error for one parameter block.
#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.max_rel_err))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() <= tolerance
    }
}

fn model_loss(model: &Model<f64>, batch: &Tensor<f64>, targets: &Tensor<f64>) -> Result<f64> {
    let probs = model.forward(batch, false, 0)?;
    cross_entropy(&probs, targets)
}

/// Analytic gradients of the eval-mode cross-entropy loss, in params order.
pub fn analytic_gradients(
    model: &Model<f64>,
    batch: &Tensor<f64>,
    targets: &Tensor<f64>,
) -> Result<Gradients<f64>> {
    let (_, trace) = model.forward_trace(batch, false, 0)?;
    Ok(model.backward(&trace, targets)?)
}

/// Central differences (f(theta+h) - f(theta-h)) / 2h of the same loss, one
/// probe per parameter scalar.
pub fn numeric_gradients(
    model: &mut Model<f64>,
    batch: &Tensor<f64>,
    targets: &Tensor<f64>,
    h: f64,
) -> Result<Vec<Tensor<f64>>> {
    let block_count = model.params().len();
    let mut out = Vec::with_capacity(block_count);
    for bi in 0..block_count {
        let len = model.params()[bi].len();
        let shape = model.params()[bi].shape().clone();
        let mut grad = Vec::with_capacity(len);
        for j in 0..len {
            let original = model.params()[bi].data()[j];
            model.params_mut()[bi].data_mut()[j] = original + h;
            let up = model_loss(model, batch, targets)?;
            model.params_mut()[bi].data_mut()[j] = original - h;
            let down = model_loss(model, batch, targets)?;
            model.params_mut()[bi].data_mut()[j] = original;
            grad.push((up - down) / (2.0 * h));
        }
        out.push(Tensor::from_vec(shape, grad)?);
    }
    Ok(out)
}

/// Compare analytic and central-difference gradients at step h, reporting
/// the max relative error per parameter block. Runs in eval mode (the
/// dropout layer is the identity), entirely in f64.
pub fn gradient_check(
    model: &mut Model<f64>,
    batch: &Tensor<f64>,
    targets: &Tensor<f64>,
    h: f64,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(model, batch, targets)?;
    let numeric = numeric_gradients(model, batch, targets, h)?;
    let names = model.param_names();
    let blocks = names
        .into_iter()
        .zip(analytic.tensors.iter().zip(numeric.iter()))
        .map(|(name, (a, n))| {
            let max_rel_err = a
                .iter()
                .zip(n.iter())
                .map(|(&av, &nv)| relative_error(av, nv))
                .fold(0.0f64, f64::max);
            BlockCheck { name, max_rel_err }
        })
        .collect();
    Ok(GradCheckReport { blocks })
}
