//! Server-side aggregation weighting rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::flcore::AdjusterState;

/// Default escalation threshold `Q` of the automatic adjuster.
pub const DEFAULT_Q_THRESHOLD: f64 = 1.5;
/// Default upper bound on the scaling factor `m`.
pub const DEFAULT_M_CAP: u32 = 3;

/// How the server turns per-client losses and sample counts into
/// aggregation weights.
///
/// Text form (used in configs, CSVs and the CLI): `fedavg`, `fedequal`,
/// `fedloss`, `fedexp:<m>`, `qffl:<q>`, `fedauto:<Q>:<M_cap>`. Bare `fedexp`
/// and `fedauto` take the defaults `m = 1` and `Q = 1.5, M_cap = 3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StrategyKind {
    /// Proportional to local train-set size.
    FedAvg,
    /// Uniform.
    FedEqual,
    /// Proportional to the reported loss.
    FedLoss,
    /// Softmax of `m · loss` with a fixed `m`.
    FedExp { m: u32 },
    /// Static q-FFL-style reweighting `N_c · L_c^q`. This is an
    /// approximation of q-FFL as a one-shot aggregation weight, not its
    /// full update rule; `q = 0` reduces exactly to FedAvg.
    QFfl { q: f64 },
    /// Softmax of `m · loss` where `m` starts at 1 and grows by one whenever
    /// `max loss > q_threshold · min loss`, up to `m_cap`.
    FedAuto { q_threshold: f64, m_cap: u32 },
}

impl StrategyKind {
    pub fn fed_auto() -> Self {
        StrategyKind::FedAuto {
            q_threshold: DEFAULT_Q_THRESHOLD,
            m_cap: DEFAULT_M_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StrategyKind::FedExp { m } if m < 1 => {
                Err(Error::validation("fedexp scaling factor m must be >= 1"))
            }
            StrategyKind::QFfl { q } if !(q >= 0.0 && q.is_finite()) => {
                Err(Error::validation("qffl q must be finite and >= 0"))
            }
            StrategyKind::FedAuto { q_threshold, .. }
                if q_threshold.is_nan() || q_threshold <= 1.0 =>
            {
                Err(Error::validation(format!(
                    "fedauto threshold Q = {q_threshold} must exceed 1"
                )))
            }
            StrategyKind::FedAuto { m_cap, .. } if m_cap < 1 => {
                Err(Error::validation("fedauto M_cap must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// Filesystem-friendly form of the text representation.
    pub fn slug(&self) -> String {
        self.to_string().replace(':', "-")
    }

    pub fn is_auto(&self) -> bool {
        matches!(self, StrategyKind::FedAuto { .. })
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::FedAvg => f.write_str("fedavg"),
            StrategyKind::FedEqual => f.write_str("fedequal"),
            StrategyKind::FedLoss => f.write_str("fedloss"),
            StrategyKind::FedExp { m } => write!(f, "fedexp:{m}"),
            StrategyKind::QFfl { q } => write!(f, "qffl:{q}"),
            StrategyKind::FedAuto { q_threshold, m_cap } => {
                write!(f, "fedauto:{q_threshold}:{m_cap}")
            }
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::validation(format!("invalid strategy `{s}`: {what}"));
        let lower = s.trim().to_ascii_lowercase();
        let mut parts = lower.split(':');
        let name = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let float = |v: &str| v.parse::<f64>().map_err(|_| bad("expected a number"));
        let int = |v: &str| v.parse::<u32>().map_err(|_| bad("expected an integer"));
        let kind = match (name, args.as_slice()) {
            ("fedavg", []) => StrategyKind::FedAvg,
            ("fedequal", []) => StrategyKind::FedEqual,
            ("fedloss", []) => StrategyKind::FedLoss,
            ("fedexp", []) => StrategyKind::FedExp { m: 1 },
            ("fedexp", [m]) => StrategyKind::FedExp { m: int(m)? },
            ("qffl", [q]) => StrategyKind::QFfl { q: float(q)? },
            ("fedauto", []) => StrategyKind::fed_auto(),
            ("fedauto", [q]) => StrategyKind::FedAuto {
                q_threshold: float(q)?,
                m_cap: DEFAULT_M_CAP,
            },
            ("fedauto", [q, cap]) => StrategyKind::FedAuto {
                q_threshold: float(q)?,
                m_cap: int(cap)?,
            },
            _ => return Err(bad("unknown name or wrong number of parameters")),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl Serialize for StrategyKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrategyKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn equal(n: usize) -> Vec<f64> {
    normalize(vec![1.0; n])
}

/// Softmax of `m · losses`, shifted by the largest loss so it cannot overflow.
fn exp_weights(losses: &[f64], m: u32) -> Vec<f64> {
    let m = f64::from(m);
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    normalize(losses.iter().map(|&l| (m * (l - max)).exp()).collect())
}

/// Aggregation weights for one round.
///
/// `losses` and `counts` are aligned by client. `adjuster` supplies the
/// current `m` for [`StrategyKind::FedAuto`] (treated as `m = 1` when absent).
/// FedLoss and QFFL fall back to uniform weights when every loss is zero.
pub fn compute_aggregation_weights(
    strategy: &StrategyKind,
    losses: &[f64],
    counts: &[usize],
    adjuster: Option<&AdjusterState>,
) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(Error::validation("no clients to weight"));
    }
    if losses.len() != counts.len() {
        return Err(Error::dimension(
            "aggregation weights",
            losses.len(),
            counts.len(),
        ));
    }
    if losses.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::validation("client losses must be finite and >= 0"));
    }
    let all_zero = losses.iter().all(|&l| l == 0.0);
    let weights = match *strategy {
        StrategyKind::FedAvg => sample_weights(counts)?,
        StrategyKind::FedEqual => equal(losses.len()),
        StrategyKind::FedLoss if all_zero => equal(losses.len()),
        StrategyKind::FedLoss => normalize(losses.to_vec()),
        StrategyKind::FedExp { m } => exp_weights(losses, m),
        StrategyKind::QFfl { q } => {
            let raw: Vec<f64> = counts
                .iter()
                .zip(losses)
                .map(|(&n, &l)| n as f64 * l.powf(q))
                .collect();
            if raw.iter().all(|&v| v == 0.0) {
                if all_zero {
                    equal(losses.len())
                } else {
                    return Err(Error::validation(
                        "qffl weights need a nonzero sample count",
                    ));
                }
            } else {
                normalize(raw)
            }
        }
        StrategyKind::FedAuto { .. } => exp_weights(losses, adjuster.map_or(1, |a| a.m())),
    };
    Ok(weights)
}

fn sample_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.iter().all(|&n| n == 0) {
        return Err(Error::validation(
            "fedavg weights need a nonzero sample count",
        ));
    }
    Ok(normalize(counts.iter().map(|&n| n as f64).collect()))
}
