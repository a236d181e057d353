use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::softmax;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Val,
    Test,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Val => "val",
            Phase::Test => "test",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Phase::Train),
            "val" => Ok(Phase::Val),
            "test" => Ok(Phase::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub model: String,
    pub dataset: String,
    pub epoch: usize,
    pub split: Phase,
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    /// Mean per-sample cross-entropy.
    pub loss: f64,
}

/// Rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// Binary view with class 1 as the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl BinaryCounts {
    /// `(TP + TN) / (TP + TN + FP + FN)`
    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.tn + self.fp + self.fn_;
        if total == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / total as f64
    }
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_pairs(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Validation(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(classes);
        for (i, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
            cm.record(t, p).map_err(|_| Error::Label {
                index: i,
                label: t.max(p),
                classes,
            })?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::Range(format!(
                "pair ({truth}, {predicted}) outside {} classes",
                self.classes
            )));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// Trace over total; 0 when empty.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.correct() as f64 / total as f64
    }

    pub fn binary(&self) -> Option<BinaryCounts> {
        (self.classes == 2).then(|| BinaryCounts {
            tp: self.get(1, 1),
            tn: self.get(0, 0),
            fp: self.get(0, 1),
            fn_: self.get(1, 0),
        })
    }
}

/// Mean cross-entropy and argmax predictions for a `B×C` logits tensor.
pub(crate) fn score_logits(logits: &Tensor, labels: &[usize]) -> (f64, Vec<usize>) {
    let c = logits.shape()[1];
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(labels.len());
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        preds.push(Tensor::argmax(row));
    }
    (loss, preds)
}

/// Inference over a whole dataset. The returned record has `epoch` 0 and
/// split `test`; callers relabel as needed.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<(MetricsRecord, ConfusionMatrix)> {
    if data.is_empty() {
        return Err(Error::Empty(format!("dataset {:?} has no samples", data.name)));
    }
    if data.num_classes() > model.num_classes() {
        return Err(Error::Validation(format!(
            "dataset has {} classes but the model predicts {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    let mut cm = ConfusionMatrix::new(model.num_classes());
    let mut loss = 0.0;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut rng = rand::SeedableRng::seed_from_u64(0);
    for chunk in all.chunks(EVAL_BATCH) {
        let batch = data.gather(chunk, &[], &mut rng)?;
        let logits = model.logits(&batch.images)?;
        let (l, preds) = score_logits(&logits, &batch.labels);
        loss += l;
        for (&t, &p) in batch.labels.iter().zip(&preds) {
            cm.record(t, p)?;
        }
    }
    let record = MetricsRecord {
        model: model.kind().to_string(),
        dataset: data.name.clone(),
        epoch: 0,
        split: Phase::Test,
        accuracy: cm.accuracy(),
        loss: loss / data.len() as f64,
    };
    Ok((record, cm))
}

/// Class probabilities for each image of a dataset, in order.
pub fn predict_proba(model: &Model, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut rng = rand::SeedableRng::seed_from_u64(0);
    let mut out = Vec::with_capacity(data.len());
    for chunk in all.chunks(EVAL_BATCH) {
        let batch = data.gather(chunk, &[], &mut rng)?;
        let logits = model.logits(&batch.images)?;
        out.extend(logits.data().chunks(model.num_classes()).map(softmax));
    }
    Ok(out)
}
