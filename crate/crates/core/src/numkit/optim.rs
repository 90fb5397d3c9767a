use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Gradients, ModelParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Optimizer bookkeeping. Adam moments are allocated lazily on the first step.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    step_count: u64,
    moments: Option<(ModelParams, ModelParams)>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step_count: 0,
            moments: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd() -> Self {
        Self::new(OptimizerKind::Sgd)
    }

    pub fn adam() -> Self {
        Self::new(OptimizerKind::Adam)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// First and second Adam moments, once any step has been taken.
    pub fn moments(&self) -> Option<(&ModelParams, &ModelParams)> {
        self.moments.as_ref().map(|(m, v)| (m, v))
    }

    /// Applies one update in place. A non-finite gradient or a negative
    /// learning rate is rejected and leaves both params and state untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
        if !params.same_shape(grads.params()) {
            return Err(Error::dimension(
                "optimizer_step",
                params.num_values(),
                grads.params().num_values(),
            ));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::validation(format!(
                "learning rate {lr} must be >= 0"
            )));
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads.iter()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let (m, v) = self.moments.get_or_insert_with(|| {
                    let mut zero = params.clone();
                    zero.iter_mut().for_each(|x| *x = 0.0);
                    (zero.clone(), zero)
                });
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let t = self.step_count as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads.iter())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate for `round_index ∈ [0, total_rounds]`.
pub fn cosine_lr(round_index: usize, total_rounds: usize, base_lr: f64) -> f64 {
    let total = total_rounds.max(1) as f64;
    let progress = (round_index as f64 / total).min(1.0);
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}
