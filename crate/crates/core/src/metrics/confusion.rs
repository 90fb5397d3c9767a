use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::GroupedPredictions;

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.num_classes || predicted >= self.num_classes {
            return Err(Error::validation(format!(
                "label pair ({truth}, {predicted}) out of range for {} classes",
                self.num_classes
            )));
        }
        self.counts[truth * self.num_classes + predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, i)).sum()
    }

    /// True instances of `class` (row sum).
    pub fn support(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|j| self.get(class, j)).sum()
    }

    /// Predictions of `class` (column sum).
    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, class)).sum()
    }
}

/// Tallies `(true, predicted)` pairs of every sample.
pub fn confusion_matrix(preds: &GroupedPredictions, num_classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(num_classes);
    for s in preds.samples() {
        cm.add(s.truth, s.predicted)?;
    }
    Ok(cm)
}

/// One-vs-rest metrics of a single class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// A precision or recall denominator was zero and the value was set to 0.
    pub degenerate: bool,
}

/// Accuracy plus support-weighted precision, recall and F1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl ClassificationReport {
    pub fn degenerate_classes(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .filter(|c| c.degenerate)
            .map(|c| c.class)
            .collect()
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Classification metrics from a confusion matrix.
///
/// Per class: `precision = TP/(TP+FP)`, `recall = TP/(TP+FN)`,
/// `F1 = 2PR/(P+R)`, each 0 when its denominator is 0. Report-level values
/// average the per-class values weighted by the number of true instances.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::validation(
            "classification report of an empty confusion matrix",
        ));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.num_classes())
        .map(|k| {
            let tp = cm.get(k, k);
            let (precision, p_degenerate) = ratio(tp, cm.predicted(k));
            let (recall, r_degenerate) = ratio(tp, cm.support(k));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                class: k,
                support: cm.support(k),
                precision,
                recall,
                f1,
                degenerate: p_degenerate || r_degenerate,
            }
        })
        .collect();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|c| c.support as f64 * f(c))
            .sum::<f64>()
            / total as f64
    };
    Ok(ClassificationReport {
        accuracy: cm.trace() as f64 / total as f64,
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
        per_class,
    })
}
