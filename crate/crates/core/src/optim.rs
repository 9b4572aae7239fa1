//! Heavy-ball SGD and the minibatch training loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use crate::data::{format_real, Dataset, TargetScale};
use crate::error::{Error, Result};
use crate::loss::{xent_softmax, LossKind};
use crate::nn::{argmax, Gradients, LayerSpec, Mode, Model, Param};
use crate::numerics::{Matrix, RngStream};

/// Rows per forward pass when scoring a whole dataset.
pub const EVAL_BATCH: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Stop after this many epochs without a new best dev error and return
    /// the best model. `None` trains for `max_epochs` and returns the last.
    pub early_stop_patience: Option<usize>,
    /// Learning-rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            max_epochs: 20,
            seed: 0,
            loss: LossKind::CrossEntropyHard,
            early_stop_patience: None,
            lr_decay: 1.0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay {} outside (0, 1]", self.lr_decay)));
        }
        Ok(())
    }
}

/// Telemetry for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_error_rate: f64,
    pub elapsed_seconds: f64,
    pub param_count: usize,
}

/// `v <- momentum * v - lr * g; theta <- theta + v`.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "params {}, grads {}, velocity {} differ in length",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    Ok(())
}

/// Velocity buffers matching a model's parameters.
pub fn zero_velocity(model: &Model) -> Vec<Option<Param>> {
    model
        .params()
        .iter()
        .map(|p| p.as_ref().map(Param::zeros_like))
        .collect()
}

/// One momentum step over every parameter tensor of a model.
pub fn apply_gradients(
    model: &mut Model,
    grads: &Gradients,
    velocity: &mut [Option<Param>],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grads.len() != model.params().len() || velocity.len() != grads.len() {
        return Err(Error::Shape("gradient list does not match model layers".into()));
    }
    for ((p, g), v) in model.params_mut().iter_mut().zip(grads).zip(velocity.iter_mut()) {
        match (p, g, v) {
            (Some(p), Some(g), Some(v)) => {
                sgd_momentum_step(
                    p.weight.as_mut_slice(),
                    g.weight.as_slice(),
                    v.weight.as_mut_slice(),
                    lr,
                    momentum,
                )?;
                match (&mut p.bias, &g.bias, &mut v.bias) {
                    (Some(pb), Some(gb), Some(vb)) => sgd_momentum_step(pb, gb, vb, lr, momentum)?,
                    (None, None, None) => {}
                    _ => return Err(Error::Shape("bias presence mismatch".into())),
                }
            }
            (None, None, None) => {}
            _ => return Err(Error::Shape("parameter presence mismatch".into())),
        }
    }
    Ok(())
}

/// Eval-mode logits for every row, in `EVAL_BATCH` chunks.
pub fn predict_all(model: &Model, features: &Matrix) -> Result<Matrix> {
    let n = features.rows();
    let mut out = Vec::with_capacity(n * model.output_dim());
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        out.extend_from_slice(model.predict(&features.slice_rows(start, end))?.as_slice());
        start = end;
    }
    if n == 0 {
        model.predict(features)?;
    }
    Ok(Matrix::from_vec_unchecked(n, model.output_dim(), out))
}

fn require_labels(dataset: &Dataset) -> Result<&[usize]> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    dataset
        .hard_labels
        .as_deref()
        .ok_or_else(|| Error::Contract("evaluation needs hard labels".into()))
}

/// Fraction of rows whose argmax logit (lowest index on ties) differs from
/// the label.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<f64> {
    evaluate_scaled(model, dataset, None)
}

/// Like [`evaluate`], mapping logits through `scale` first.
pub fn evaluate_scaled(model: &Model, dataset: &Dataset, scale: Option<&TargetScale>) -> Result<f64> {
    let labels = require_labels(dataset)?;
    let logits = scaled_logits(model, &dataset.features, scale)?;
    Ok(error_rate(&logits, labels))
}

fn scaled_logits(model: &Model, features: &Matrix, scale: Option<&TargetScale>) -> Result<Matrix> {
    let logits = predict_all(model, features)?;
    Ok(match scale {
        Some(s) => s.denormalize(&logits),
        None => logits,
    })
}

pub(crate) fn error_rate(logits: &Matrix, labels: &[usize]) -> f64 {
    let wrong = logits
        .row_iter()
        .zip(labels)
        .filter(|(row, &l)| argmax(row) != l)
        .count();
    wrong as f64 / labels.len() as f64
}

/// Rewrites the output layer so the model emits `sigma * logits + mu`.
pub fn fold_target_scale(model: &Model, scale: &TargetScale) -> Result<Model> {
    let spec = model.spec().clone();
    let last = spec
        .layers
        .iter()
        .rposition(LayerSpec::has_params)
        .ok_or_else(|| Error::Contract("model has no output layer".into()))?;
    let LayerSpec::Dense { input, output, activation, .. } = spec.layers[last] else {
        return Err(Error::Contract("output layer is not dense".into()));
    };
    if activation != crate::nn::Activation::Identity || spec.layers.len() != last + 1 {
        return Err(Error::Contract(
            "target scale can only be folded into a final linear layer".into(),
        ));
    }
    if scale.mu.len() != output || scale.sigma.len() != output {
        return Err(Error::Shape(format!(
            "target scale has {} entries for {output} outputs",
            scale.mu.len()
        )));
    }
    let p = model.params()[last].as_ref().expect("dense layer has params");
    let mut weight = p.weight.clone();
    for r in 0..output {
        weight.row_mut(r).iter_mut().for_each(|w| *w *= scale.sigma[r]);
    }
    let bias = (0..output)
        .map(|r| scale.sigma[r] * p.bias.as_ref().map_or(0.0, |b| b[r]) + scale.mu[r])
        .collect();
    let mut layers = spec.layers.clone();
    layers[last] = LayerSpec::Dense {
        input,
        output,
        activation,
        bias: true,
    };
    let mut params = model.params().to_vec();
    params[last] = Some(Param {
        weight,
        bias: Some(bias),
    });
    Model::from_parts(
        crate::nn::NetworkSpec::new(spec.input_shape, layers, spec.output_dim)?,
        params,
    )
}

fn check_compatible(model: &Model, train_set: &Dataset, dev_set: &Dataset, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    for (name, ds) in [("train", train_set), ("dev", dev_set)] {
        if ds.dim() != model.input_size() {
            return Err(Error::Config(format!(
                "{name} set has {} features, model expects {}",
                ds.dim(),
                model.input_size()
            )));
        }
        if ds.class_count != model.output_dim() {
            return Err(Error::Config(format!(
                "{name} set has {} classes, model outputs {}",
                ds.class_count,
                model.output_dim()
            )));
        }
    }
    if config.loss.needs_soft_targets() {
        if train_set.soft_targets.is_none() {
            return Err(Error::Config(format!(
                "loss {} needs soft targets on the train set",
                config.loss.name()
            )));
        }
    } else if train_set.hard_labels.is_none() {
        return Err(Error::Config("cross-entropy needs hard labels on the train set".into()));
    }
    if train_set.target_scale.is_some() && config.loss != LossKind::L2Logit && config.loss != LossKind::KlMimic && config.loss != LossKind::L2Prob {
        return Err(Error::Config("normalized targets need a mimic loss".into()));
    }
    if dev_set.is_empty() || dev_set.hard_labels.is_none() {
        return Err(Error::Config("dev set must be non-empty with hard labels".into()));
    }
    if train_set.is_empty() {
        return Err(Error::Config("train set is empty".into()));
    }
    Ok(())
}

/// Loss on the dev set: the training objective when the dev set carries
/// matching soft targets, otherwise cross-entropy on hard labels.
fn dev_loss(model: &Model, dev: &Dataset, loss: LossKind, scale: Option<&TargetScale>) -> Result<f64> {
    let raw = predict_all(model, &dev.features)?;
    match (&dev.soft_targets, loss.needs_soft_targets()) {
        (Some(targets), true) => Ok(loss.soft(&raw, targets)?.0),
        _ => {
            let logits = match scale {
                Some(s) => s.denormalize(&raw),
                None => raw,
            };
            let labels = dev.hard_labels.as_deref().expect("checked before training");
            Ok(xent_softmax(&logits, labels)?.0)
        }
    }
}

/// Trains `model` and returns it with one [`MetricsRecord`] per epoch.
///
/// Each epoch reshuffles the training rows with a stream derived from
/// `config.seed`, then runs forward, loss, backward and a momentum step per
/// minibatch. The final ragged minibatch is kept. When the training targets
/// are normalized logits, dev metrics are computed on denormalized
/// predictions and the returned model has the scale folded into its output
/// layer.
pub fn train(
    model: &Model,
    train_set: &Dataset,
    dev_set: &Dataset,
    config: &TrainConfig,
) -> Result<(Model, Vec<MetricsRecord>)> {
    train_with_observer(model, train_set, dev_set, config, |_, _| {})
}

/// [`train`] with a callback after each epoch, receiving the epoch record
/// and the current (unscaled) model.
pub fn train_with_observer(
    model: &Model,
    train_set: &Dataset,
    dev_set: &Dataset,
    config: &TrainConfig,
    mut observer: impl FnMut(&MetricsRecord, &Model),
) -> Result<(Model, Vec<MetricsRecord>)> {
    check_compatible(model, train_set, dev_set, config)?;
    if config.max_epochs == 0 {
        return Ok((model.clone(), Vec::new()));
    }
    let scale = train_set.target_scale.as_ref();
    let root = RngStream::new(config.seed);
    let mut shuffle_rng = root.child(0);
    let mut dropout_rng = root.child(1);
    let mut current = model.clone();
    let mut velocity = zero_velocity(&current);
    let mut lr = config.learning_rate;
    let n = train_set.len();
    let started = Instant::now();

    let mut metrics = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, Model)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let order: Vec<usize> = if config.shuffle {
            shuffle_rng.permutation(n)
        } else {
            (0..n).collect()
        };
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train_set.features.select_rows(chunk);
            let (logits, cache) = current.forward(&batch, Mode::Train, &mut dropout_rng)?;
            let (loss, dlogits) = match config.loss {
                LossKind::CrossEntropyHard => {
                    let labels = train_set.hard_labels.as_deref().expect("checked");
                    let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    xent_softmax(&logits, &y)?
                }
                kind => {
                    let targets = train_set.soft_targets.as_ref().expect("checked");
                    kind.soft(&logits, &targets.select_rows(chunk))?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged to {loss} in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            let grads = current.backward(&cache, &dlogits)?;
            apply_gradients(&mut current, &grads, &mut velocity, lr, config.momentum)?;
        }
        lr *= config.lr_decay;

        let record = MetricsRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            dev_loss: dev_loss(&current, dev_set, config.loss, scale)?,
            dev_error_rate: evaluate_scaled(&current, dev_set, scale)?,
            elapsed_seconds: started.elapsed().as_secs_f64(),
            param_count: current.param_count(),
        };
        observer(&record, &current);
        let improved = best.as_ref().is_none_or(|(e, _)| record.dev_error_rate < *e);
        metrics.push(record);
        if let Some(patience) = config.early_stop_patience {
            if improved {
                best = Some((metrics.last().expect("pushed").dev_error_rate, current.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    let chosen = match best {
        Some((_, m)) => m,
        None => current,
    };
    let chosen = match scale {
        Some(s) => fold_target_scale(&chosen, s)?,
        None => chosen,
    };
    Ok((chosen, metrics))
}

pub const METRICS_HEADER: &str = "epoch,train_loss,dev_loss,dev_error,seconds,params";

/// Metrics as CSV text. With `wall_clock = false` the seconds column is
/// written as `0` so identical runs produce identical files.
pub fn metrics_csv(records: &[MetricsRecord], wall_clock: bool) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let seconds = if wall_clock {
            format!("{:.3}", r.elapsed_seconds)
        } else {
            "0".to_string()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            format_real(r.train_loss),
            format_real(r.dev_loss),
            format_real(r.dev_error_rate),
            seconds,
            r.param_count
        ));
    }
    out
}

pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[MetricsRecord], wall_clock: bool) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(metrics_csv(records, wall_clock).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
