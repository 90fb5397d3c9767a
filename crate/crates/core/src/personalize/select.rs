//! Fairness-constrained choice of one checkpoint per client.
//!
//! Objective, in order: keep the spread (max − min chosen accuracy) within
//! `delta`, maximize the minimum chosen accuracy, then the mean, then prefer
//! fewer total epochs. The optimum's minimum is always some observed
//! accuracy `a`, so it suffices to sweep windows `[a, a + delta]` anchored at
//! every observed value and let each client take its best checkpoint inside
//! the window.
//!
//! When no window of width `delta` fits, the smallest achievable spread is
//! found first and the same objective is applied with that spread as the
//! bound.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::personalize::CheckpointHistory;

/// Default maximum accuracy spread across clients.
pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub client_id: usize,
    pub epoch: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub choices: Vec<Choice>,
    pub spread: f64,
    /// `(low, high)` accuracy window the choices fall in.
    pub window: (f64, f64),
    /// False when no assignment fits within `delta`; the choices then
    /// minimize the spread instead.
    pub feasible: bool,
}

impl SelectionResult {
    pub fn min_accuracy(&self) -> f64 {
        self.choices
            .iter()
            .map(|c| c.accuracy)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.choices.iter().map(|c| c.accuracy).sum::<f64>() / self.choices.len() as f64
    }

    pub fn total_epochs(&self) -> usize {
        self.choices.iter().map(|c| c.epoch).sum()
    }
}

/// Per-client `(accuracy, epoch)` sorted by accuracy, then epoch.
fn sorted_entries(h: &CheckpointHistory) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> = h
        .entries()
        .iter()
        .map(|c| (c.val_accuracy, c.epoch))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v
}

/// Earliest-epoch entry among those sharing the accuracy at `idx`.
fn earliest_with_same_accuracy(sorted: &[(f64, usize)], idx: usize) -> (f64, usize) {
    let acc = sorted[idx].0;
    let first = sorted.partition_point(|e| e.0 < acc);
    sorted[first]
}

struct Candidate {
    picks: Vec<(f64, usize)>,
}

impl Candidate {
    fn min(&self) -> f64 {
        self.picks.iter().map(|p| p.0).fold(f64::INFINITY, f64::min)
    }
    fn max(&self) -> f64 {
        self.picks
            .iter()
            .map(|p| p.0)
            .fold(f64::NEG_INFINITY, f64::max)
    }
    fn mean(&self) -> f64 {
        self.picks.iter().map(|p| p.0).sum::<f64>() / self.picks.len() as f64
    }
    fn epochs(&self) -> usize {
        self.picks.iter().map(|p| p.1).sum()
    }
    fn spread(&self) -> f64 {
        self.max() - self.min()
    }

    /// `Greater` when `self` is preferred for a feasible selection.
    fn cmp_feasible(&self, other: &Candidate) -> Ordering {
        self.min()
            .total_cmp(&other.min())
            .then(self.mean().total_cmp(&other.mean()))
            .then(other.epochs().cmp(&self.epochs()))
    }
}

/// Picks one checkpoint per client, see the module docs for the objective.
pub fn select_personalized_models(
    histories: &[CheckpointHistory],
    delta: f64,
) -> Result<SelectionResult> {
    if histories.is_empty() {
        return Err(Error::validation("no checkpoint histories to select from"));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::validation(format!(
            "delta = {delta} must be positive"
        )));
    }
    for h in histories {
        h.validate()?;
    }
    let sorted: Vec<Vec<(f64, usize)>> = histories.iter().map(sorted_entries).collect();
    let mut anchors: Vec<f64> = sorted.iter().flatten().map(|e| e.0).collect();
    anchors.sort_by(f64::total_cmp);
    anchors.dedup();

    if let Some(best) = best_within(&sorted, &anchors, delta) {
        return Ok(finish(histories, best, true));
    }

    // Infeasible: for each anchor every client takes its lowest checkpoint at or
    // above the anchor, which minimizes the spread for windows starting there.
    let mut min_spread = f64::INFINITY;
    for &low in &anchors {
        let picks: Option<Vec<(f64, usize)>> = sorted
            .iter()
            .map(|entries| {
                let start = entries.partition_point(|e| e.0 < low);
                entries.get(start).copied()
            })
            .collect();
        if let Some(picks) = picks {
            min_spread = min_spread.min(Candidate { picks }.spread());
        }
    }
    // Among the minimum-spread assignments, apply the feasible objective.
    let best = best_within(&sorted, &anchors, min_spread)
        .expect("a minimum-spread assignment fits its own spread");
    Ok(finish(histories, best, false))
}

/// Best assignment under the feasible objective with spread at most `delta`.
fn best_within(sorted: &[Vec<(f64, usize)>], anchors: &[f64], delta: f64) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for &low in anchors {
        let picks: Option<Vec<(f64, usize)>> = sorted
            .iter()
            .map(|entries| {
                let end = entries.partition_point(|e| e.0 - low <= delta);
                (end > 0 && entries[end - 1].0 >= low)
                    .then(|| earliest_with_same_accuracy(entries, end - 1))
            })
            .collect();
        if let Some(picks) = picks {
            let cand = Candidate { picks };
            if best
                .as_ref()
                .is_none_or(|b| cand.cmp_feasible(b) == Ordering::Greater)
            {
                best = Some(cand);
            }
        }
    }
    best
}

fn finish(histories: &[CheckpointHistory], cand: Candidate, feasible: bool) -> SelectionResult {
    let (low, high) = (cand.min(), cand.max());
    SelectionResult {
        choices: histories
            .iter()
            .zip(&cand.picks)
            .map(|(h, &(accuracy, epoch))| Choice {
                client_id: h.client_id,
                epoch,
                accuracy,
            })
            .collect(),
        spread: high - low,
        window: (low, high),
        feasible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(id: usize, log: &[(usize, f64)]) -> CheckpointHistory {
        CheckpointHistory::from_log(id, log).unwrap()
    }

    #[test]
    fn common_accuracy_gives_zero_spread() {
        let hs = vec![
            h(0, &[(1, 0.6), (2, 0.75)]),
            h(1, &[(1, 0.75), (2, 0.7)]),
            h(2, &[(3, 0.75)]),
        ];
        let r = select_personalized_models(&hs, 0.05).unwrap();
        assert!(r.feasible);
        assert!(r.choices.iter().all(|c| c.accuracy == 0.75));
        assert_eq!(r.spread, 0.0);
    }

    #[test]
    fn two_client_example() {
        let hs = vec![
            h(0, &[(10, 0.70), (20, 0.72)]),
            h(1, &[(5, 0.68), (15, 0.80), (25, 0.74)]),
        ];
        let r = select_personalized_models(&hs, 0.05).unwrap();
        assert_eq!((r.choices[0].epoch, r.choices[0].accuracy), (20, 0.72));
        assert_eq!((r.choices[1].epoch, r.choices[1].accuracy), (25, 0.74));
        assert!((r.spread - 0.02).abs() < 1e-12);
    }

    #[test]
    fn high_peaks_are_traded_for_mid_training_checkpoints() {
        // Peaks mirror the six-client pattern: two fast clients overshoot the
        // feasible window and must take earlier checkpoints.
        let hs = vec![
            h(0, &[(50, 0.65), (175, 0.709)]),
            h(1, &[(60, 0.70), (160, 0.740)]),
            h(2, &[(80, 0.71), (166, 0.738)]),
            h(3, &[(52, 0.746), (150, 0.772)]),
            h(4, &[(27, 0.738), (120, 0.809)]),
            h(5, &[(90, 0.69), (184, 0.725)]),
        ];
        let r = select_personalized_models(&hs, 0.05).unwrap();
        assert!(r.feasible);
        let picked: Vec<usize> = r.choices.iter().map(|c| c.epoch).collect();
        assert_eq!(picked, vec![175, 160, 166, 52, 27, 184]);
        assert!((r.spread - 0.037).abs() < 1e-12);
        assert!(r.spread <= 0.05);
    }

    #[test]
    fn infinite_delta_takes_peaks() {
        let hs = vec![
            h(0, &[(1, 0.3), (2, 0.9), (3, 0.5)]),
            h(1, &[(1, 0.2), (2, 0.4)]),
        ];
        let r = select_personalized_models(&hs, f64::INFINITY).unwrap();
        assert_eq!(r.choices[0].epoch, 2);
        assert_eq!(r.choices[1].epoch, 2);
    }

    #[test]
    fn infeasible_minimizes_spread() {
        let hs = vec![h(0, &[(1, 0.1), (2, 0.5)]), h(1, &[(1, 0.9), (2, 0.7)])];
        let r = select_personalized_models(&hs, 0.05).unwrap();
        assert!(!r.feasible);
        assert!((r.spread - 0.2).abs() < 1e-12);
        assert_eq!((r.choices[0].epoch, r.choices[1].epoch), (2, 2));
    }

    #[test]
    fn ties_prefer_earlier_epochs() {
        let hs = vec![h(0, &[(1, 0.7), (2, 0.7), (3, 0.6)])];
        let r = select_personalized_models(&hs, 0.05).unwrap();
        assert_eq!(r.choices[0].epoch, 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(select_personalized_models(&[], 0.05).is_err());
        let hs = vec![h(0, &[(1, 0.7)])];
        assert!(select_personalized_models(&hs, 0.0).is_err());
        assert!(select_personalized_models(&hs, f64::NAN).is_err());
    }
}
