//! Evaluation metrics: confusion matrices, per-class accuracy, and the two
//! attack success rate definitions.
//!
//! Label-exchange ASR is the average rate of the two exchanged classes
//! being misclassified into one another; back-door ASR is the rate of the
//! extra pictures classified into the target label, with the mean softmax
//! confidence of the target alongside.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{BnMode, Network, Tensor};

/// C x C counts; rows are true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, true_label: usize, predicted: usize) {
        self.counts[true_label * self.classes + predicted] += 1;
    }

    pub fn count(&self, true_label: usize, predicted: usize) -> u64 {
        self.counts[true_label * self.classes + predicted]
    }

    pub fn row_sum(&self, true_label: usize) -> u64 {
        self.counts[true_label * self.classes..(true_label + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let diag: u64 = (0..self.classes).map(|c| self.count(c, c)).sum();
        diag as f64 / total as f64
    }

    /// Diagonal over row sum per class; empty rows report accuracy 0.
    pub fn per_class_accuracy(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let row = self.row_sum(c);
                if row == 0 {
                    0.0
                } else {
                    self.count(c, c) as f64 / row as f64
                }
            })
            .collect()
    }

    /// Top-1 accuracy restricted to the given true classes.
    pub fn accuracy_on(&self, classes: &[usize]) -> f64 {
        let mut total = 0u64;
        let mut correct = 0u64;
        for &c in classes {
            total += self.row_sum(c);
            correct += self.count(c, c);
        }
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str("true\\pred");
        for c in 0..self.classes {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for r in 0..self.classes {
            s.push_str(&r.to_string());
            for c in 0..self.classes {
                s.push_str(&format!(",{}", self.count(r, c)));
            }
            s.push('\n');
        }
        s
    }
}

/// Average cross-misclassification rate of two exchanged classes:
/// (cm[a,b]/row(a) + cm[b,a]/row(b)) / 2.
pub fn asr_label_exchange(cm: &ConfusionMatrix, a: usize, b: usize) -> Result<f64> {
    if a == b || a >= cm.classes || b >= cm.classes {
        return Err(Error::Config(format!(
            "label-exchange ASR needs two distinct valid classes, got {a} and {b}"
        )));
    }
    let (ra, rb) = (cm.row_sum(a), cm.row_sum(b));
    if ra == 0 || rb == 0 {
        return Err(Error::Config(format!(
            "label-exchange ASR undefined: class {a} has {ra} rows, class {b} has {rb}"
        )));
    }
    Ok(0.5 * (cm.count(a, b) as f64 / ra as f64 + cm.count(b, a) as f64 / rb as f64))
}

/// Back-door success on a set of extra images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackdoorMeasure {
    pub rate: f64,
    pub avg_confidence: f64,
}

/// Success rate and mean target confidence from per-image (argmax, softmax
/// target probability) pairs.
pub fn backdoor_measure(outcomes: &[(usize, f64)], target: usize) -> Result<BackdoorMeasure> {
    if outcomes.is_empty() {
        return Err(Error::Config("back-door measurement over empty extra set".into()));
    }
    let hits = outcomes.iter().filter(|(pred, _)| *pred == target).count();
    let conf: f64 = outcomes.iter().map(|(_, c)| c).sum::<f64>() / outcomes.len() as f64;
    Ok(BackdoorMeasure {
        rate: hits as f64 / outcomes.len() as f64,
        avg_confidence: conf,
    })
}

pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Softmax probability of `target` for a single logits row, at f64.
pub fn softmax_confidence(logits: &[f32], target: usize) -> f64 {
    let mx = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut sum = 0.0f64;
    for &v in logits {
        sum += ((v as f64) - mx).exp();
    }
    ((logits[target] as f64 - mx).exp()) / sum
}

/// Evaluate a float network over a dataset with running-statistics batch
/// norm; returns the confusion matrix.
pub fn eval_network(
    network: &Network<f32>,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(dataset.classes());
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, labels) = dataset.batch(chunk);
        let logits = network.forward_eval(&batch)?;
        let c = logits.shape()[1];
        for (i, &label) in labels.iter().enumerate() {
            let row = &logits.data()[i * c..(i + 1) * c];
            cm.record(label, argmax(row));
        }
    }
    Ok(cm)
}

/// Per-image (argmax, target softmax confidence) for a float network.
pub fn network_outcomes(
    network: &Network<f32>,
    images: &[Tensor<f32>],
    target: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let logits = network.forward_eval(img)?;
        let row = logits.data();
        out.push((argmax(row), softmax_confidence(row, target)));
    }
    Ok(out)
}

/// Mean eval-mode loss of a network over a sampled batch (diagnostics).
pub fn sample_loss(network: &Network<f32>, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    let (batch, labels) = dataset.batch(indices);
    let (logits, _, _) = network.forward_trace(&batch, BnMode::Running)?;
    let (loss, _, _) = crate::nn::loss_softmax_ce(&logits, &labels)?;
    Ok(loss)
}
