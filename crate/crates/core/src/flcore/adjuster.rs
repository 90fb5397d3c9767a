use serde::{Deserialize, Serialize};

/// Automatic scaling-factor controller for FedAuto.
///
/// `m` starts at 1 and grows by exactly one in a round whose losses satisfy
/// `max > Q · min`, as long as `m < M_cap`. With `allow_decrease` set it
/// also steps down by one in rounds where the condition fails; this is off
/// by default.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjusterState {
    m: u32,
    history: Vec<(usize, u32)>,
    pub allow_decrease: bool,
}

impl Default for AdjusterState {
    fn default() -> Self {
        Self::new()
    }
}

impl AdjusterState {
    pub fn new() -> Self {
        Self {
            m: 1,
            history: Vec::new(),
            allow_decrease: false,
        }
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    /// `(round, m after that round's update)` for every update so far.
    pub fn history(&self) -> &[(usize, u32)] {
        &self.history
    }

    /// Whether the losses are spread widely enough to escalate `m`.
    pub fn spread_exceeds(losses: &[f64], q_threshold: f64) -> bool {
        let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        max > q_threshold * min
    }

    /// Applies one round's losses and returns the resulting `m`.
    pub fn update(&mut self, round: usize, losses: &[f64], q_threshold: f64, m_cap: u32) -> u32 {
        if !losses.is_empty() {
            if Self::spread_exceeds(losses, q_threshold) {
                if self.m < m_cap {
                    self.m += 1;
                }
            } else if self.allow_decrease && self.m > 1 {
                self.m -= 1;
            }
        }
        self.history.push((round, self.m));
        self.m
    }
}
