//! Group fairness: accuracy variance across groups and the gap/worst
//! metrics, which compare a group's accuracy with the pooled accuracy of
//! every sample outside it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::GroupedPredictions;

/// Population variance `Σ(aᵢ − ā)² / n`. Returns 0 for an empty slice.
pub fn accuracy_variance(per_group_acc: &[f64]) -> f64 {
    if per_group_acc.is_empty() {
        return 0.0;
    }
    let n = per_group_acc.len() as f64;
    let mean = per_group_acc.iter().sum::<f64>() / n;
    per_group_acc
        .iter()
        .map(|a| (a - mean).powi(2))
        .sum::<f64>()
        / n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupFairness {
    pub group: usize,
    pub samples: usize,
    pub accuracy: f64,
    /// Accuracy over all samples whose group differs from this one.
    pub complement_accuracy: f64,
    pub gap: f64,
    pub worst: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub groups: Vec<GroupFairness>,
    pub variance: f64,
    pub mean_gap: f64,
    pub mean_worst: f64,
}

impl FairnessReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.accuracy).collect()
    }
}

/// Per-group accuracy, gap and worst, plus their model-level means.
///
/// Every declared group and its complement must contain at least one sample.
pub fn gap_worst_report(preds: &GroupedPredictions) -> Result<FairnessReport> {
    let k = preds.num_groups();
    let mut totals = vec![0usize; k];
    let mut correct = vec![0usize; k];
    for s in preds.samples() {
        totals[s.group] += 1;
        if s.truth == s.predicted {
            correct[s.group] += 1;
        }
    }
    let all: usize = totals.iter().sum();
    let all_correct: usize = correct.iter().sum();
    let mut groups = Vec::with_capacity(k);
    for g in 0..k {
        if totals[g] == 0 {
            return Err(Error::validation(format!("group {g} has no samples")));
        }
        let rest = all - totals[g];
        if rest == 0 {
            return Err(Error::validation(format!(
                "group {g} has an empty complement"
            )));
        }
        let accuracy = correct[g] as f64 / totals[g] as f64;
        let complement_accuracy = (all_correct - correct[g]) as f64 / rest as f64;
        groups.push(GroupFairness {
            group: g,
            samples: totals[g],
            accuracy,
            complement_accuracy,
            gap: (accuracy - complement_accuracy).abs(),
            worst: accuracy.min(complement_accuracy),
        });
    }
    let n = k as f64;
    let accs: Vec<f64> = groups.iter().map(|g| g.accuracy).collect();
    Ok(FairnessReport {
        variance: accuracy_variance(&accs),
        mean_gap: groups.iter().map(|g| g.gap).sum::<f64>() / n,
        mean_worst: groups.iter().map(|g| g.worst).sum::<f64>() / n,
        groups,
    })
}
