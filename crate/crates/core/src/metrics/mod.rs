//! Classification metrics (accuracy, support-weighted precision/recall/F1)
//! and group fairness metrics (accuracy variance, gap, worst).

mod confusion;
mod fairness;
mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use confusion::{
    classification_report, confusion_matrix, ClassMetrics, ClassificationReport, ConfusionMatrix,
};
pub use fairness::{accuracy_variance, gap_worst_report, FairnessReport, GroupFairness};
pub use io::{
    read_fairness_csv, read_predictions, write_fairness_csv, write_fairness_json,
    write_predictions, FairnessSummary,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub group: usize,
    pub truth: usize,
    pub predicted: usize,
}

/// Predictions tagged with the group (client / skin type) of each sample.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroupedPredictions {
    num_groups: usize,
    samples: Vec<Prediction>,
}

impl GroupedPredictions {
    pub fn new(num_groups: usize, samples: Vec<Prediction>) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.group >= num_groups) {
            return Err(Error::validation(format!(
                "group {} outside the declared {num_groups} groups",
                s.group
            )));
        }
        Ok(Self {
            num_groups,
            samples,
        })
    }

    /// Builds predictions for one group from aligned label lists.
    pub fn push_group(&mut self, group: usize, truth: &[usize], predicted: &[usize]) {
        self.num_groups = self.num_groups.max(group + 1);
        self.samples.extend(
            truth
                .iter()
                .zip(predicted)
                .map(|(&truth, &predicted)| Prediction {
                    group,
                    truth,
                    predicted,
                }),
        );
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn samples(&self) -> &[Prediction] {
        &self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Largest label seen, plus one.
    pub fn inferred_num_classes(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.truth.max(s.predicted) + 1)
            .max()
            .unwrap_or(0)
    }

    /// Accuracy of each group; `None` for groups without samples.
    pub fn group_accuracies(&self) -> Vec<Option<f64>> {
        let mut totals = vec![(0usize, 0usize); self.num_groups];
        for s in &self.samples {
            totals[s.group].0 += 1;
            totals[s.group].1 += usize::from(s.truth == s.predicted);
        }
        totals
            .into_iter()
            .map(|(n, ok)| (n > 0).then(|| ok as f64 / n as f64))
            .collect()
    }
}
