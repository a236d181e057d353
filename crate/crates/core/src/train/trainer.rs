use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamConfig, AdamState};
use super::checkpoint::Checkpoint;
use super::metrics::{evaluate, score_logits, MetricsRecord, Phase};
use crate::autograd::Tape;
use crate::data::{make_batches, AugmentOp, Dataset};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};

/// Mixed into the seed for dropout masks so they never share a stream with
/// shuffling or augmentation.
const DROPOUT_SALT: u64 = 0x6472_6f70_6f75_7400;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Train only the head; every other tensor stays bit-identical.
    pub freeze_backbone: bool,
    /// Applied in order to every training sample.
    pub augment: Vec<AugmentOp>,
    /// Fail on the first non-finite value instead of at the loss.
    pub strict: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 75,
            lr: 0.001,
            seed: 0,
            freeze_backbone: false,
            augment: Vec::new(),
            strict: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "need epochs >= 1, batch_size >= 1 and lr > 0 (got {}, {}, {})",
                self.epochs, self.batch_size, self.lr
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..Default::default()
        }
    }
}

/// Whether training should continue after an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

fn dataset_label(name: &str) -> String {
    name.strip_suffix("-train").unwrap_or(name).to_string()
}

fn check_compatible(model: &Model, data: &Dataset, role: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty(format!("{role} set {:?} has no samples", data.name)));
    }
    let expected = model.config().input_shape();
    if data.image_shape() != Some(&expected[..]) {
        return Err(Error::Config(format!(
            "{role} images have shape {:?} but the model expects {expected:?}",
            data.image_shape()
        )));
    }
    if data.num_classes() > model.num_classes() {
        return Err(Error::Config(format!(
            "{role} set has {} classes but the model predicts {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    Ok(())
}

/// Trains `model` in place for `cfg.epochs` epochs. Each epoch yields a
/// train record (running statistics over that epoch's batches) and a val
/// record.
pub fn train(model: &mut Model, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<Vec<MetricsRecord>> {
    train_with(model, train_set, val_set, cfg, |_| Control::Continue)
}

/// [`train`] with a hook called after every epoch with the history so far.
pub fn train_with(
    model: &mut Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&[MetricsRecord]) -> Control,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    check_compatible(model, train_set, "training")?;
    check_compatible(model, val_set, "validation")?;
    if cfg.freeze_backbone {
        let head = model.head_names();
        model.params_mut().set_trainable(|n| head.iter().any(|h| h == n));
    } else {
        model.params_mut().set_trainable(|_| true);
    }
    let mut adam = AdamState::new(cfg.adam())?;
    let kind = model.kind().to_string();
    let dataset = dataset_label(&train_set.name);
    let mut history = Vec::with_capacity(2 * cfg.epochs);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SALT);

    for epoch in 1..=cfg.epochs {
        let batches = make_batches(train_set, cfg.batch_size, cfg.seed, epoch - 1, true, &cfg.augment)?;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            let diverged = |loss: f64| {
                move |e: Error| match e {
                    Error::NonFinite { .. } => Error::Divergence { epoch, batch: b, loss },
                    other => other,
                }
            };
            let tape = Tape::with_strict(cfg.strict);
            let bound = model.params().bind_trainable(&tape);
            let x = tape.constant(batch.images.clone());
            let out = model
                .forward(&tape, &bound, x, Some(&mut dropout_rng))
                .map_err(diverged(f64::NAN))?;
            let loss = tape.cross_entropy(out.logits, &batch.labels).map_err(diverged(f64::NAN))?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(diverged(value)(Error::NonFinite { op: "cross_entropy" }));
            }
            let (batch_loss, preds) = score_logits(&tape.value(out.logits), &batch.labels);
            loss_sum += batch_loss;
            correct += preds.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
            let mut grads = tape.backward(loss).map_err(diverged(value))?;
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate(&bound, &mut grads)?;
            adam.step(params)?;
        }
        history.push(MetricsRecord {
            model: kind.clone(),
            dataset: dataset.clone(),
            epoch,
            split: Phase::Train,
            accuracy: correct as f64 / train_set.len() as f64,
            loss: loss_sum / train_set.len() as f64,
        });
        let (mut val, _) = evaluate(model, val_set)?;
        val.dataset = dataset.clone();
        val.epoch = epoch;
        val.split = Phase::Val;
        history.push(val);
        if on_epoch(&history) == Control::Stop {
            break;
        }
    }
    Ok(history)
}

/// Trains a freshly initialized model on a surrogate task and packages the
/// result, head included.
pub fn pretrain(
    config: ModelConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<MetricsRecord>)> {
    if train_set.num_classes() < 2 {
        return Err(Error::Config("pretraining needs at least 2 classes".into()));
    }
    let mut model = Model::build(config, cfg.seed)?;
    let history = train(&mut model, train_set, val_set, cfg)?;
    let ck = Checkpoint::from_model(&model, cfg.seed, cfg.epochs, dataset_label(&train_set.name), cfg.adam());
    Ok((ck, history))
}

/// Restores a checkpoint, swaps in a fresh head sized for the target task
/// and trains it.
pub fn fine_tune(
    checkpoint: &Checkpoint,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, Vec<MetricsRecord>)> {
    let mut model = checkpoint.to_model()?;
    model.replace_head(train_set.num_classes(), cfg.seed)?;
    let history = train(&mut model, train_set, val_set, cfg)?;
    Ok((model, history))
}
