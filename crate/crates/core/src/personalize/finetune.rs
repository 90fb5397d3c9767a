use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::flcore::{accuracy_on, local_update, ClientState, LocalTraining};
use crate::numkit::rng::{purpose, stream_key};
use crate::numkit::{cosine_lr, ModelParams, OptimizerKind, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            eval_every: 1,
            batch_size: 128,
            base_lr: 1e-4,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub val_accuracy: f64,
    /// Parameters at this epoch; dropped by [`CheckpointHistory::retain_snapshot`].
    pub params: Option<Arc<ModelParams>>,
}

/// Validation accuracy of one client's model over fine-tuning epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHistory {
    pub client_id: usize,
    entries: Vec<Checkpoint>,
}

impl CheckpointHistory {
    /// Builds a history from `(epoch, accuracy)` pairs without snapshots.
    pub fn from_log(client_id: usize, log: &[(usize, f64)]) -> Result<Self> {
        let entries = log
            .iter()
            .map(|&(epoch, val_accuracy)| Checkpoint {
                epoch,
                val_accuracy,
                params: None,
            })
            .collect();
        let h = Self { client_id, entries };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::validation(format!(
                "client {} has an empty checkpoint history",
                self.client_id
            )));
        }
        if self.entries.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
            return Err(Error::validation(format!(
                "client {} checkpoint epochs must be strictly increasing",
                self.client_id
            )));
        }
        if self
            .entries
            .iter()
            .any(|c| !(0.0..=1.0).contains(&c.val_accuracy))
        {
            return Err(Error::validation(format!(
                "client {} has a checkpoint accuracy outside [0, 1]",
                self.client_id
            )));
        }
        Ok(())
    }

    pub fn entries(&self) -> &[Checkpoint] {
        &self.entries
    }

    pub fn get(&self, epoch: usize) -> Option<&Checkpoint> {
        self.entries.iter().find(|c| c.epoch == epoch)
    }

    /// Highest-accuracy checkpoint, earliest epoch on ties.
    pub fn peak(&self) -> &Checkpoint {
        self.entries.iter().fold(&self.entries[0], |best, c| {
            if c.val_accuracy > best.val_accuracy {
                c
            } else {
                best
            }
        })
    }

    /// Drops every parameter snapshot except the one at `epoch`.
    pub fn retain_snapshot(&mut self, epoch: usize) {
        for c in &mut self.entries {
            if c.epoch != epoch {
                c.params = None;
            }
        }
    }
}

/// Fine-tunes the global model on one client, recording validation
/// accuracy every `eval_every` epochs and at the final epoch.
///
/// Uses a fresh optimizer and a cosine schedule over the fine-tuning epochs.
pub fn fine_tune_client(
    client: &ClientState,
    ds: &Dataset,
    global_params: &ModelParams,
    cfg: &FineTuneConfig,
) -> Result<CheckpointHistory> {
    if cfg.epochs == 0 || cfg.eval_every == 0 {
        return Err(Error::validation(
            "fine-tuning epochs and eval_every must be >= 1",
        ));
    }
    global_params.validate()?;
    let mut local = client.clone();
    local.optimizer = OptimizerState::new(cfg.optimizer);
    let training = LocalTraining {
        epochs: 1,
        batch_size: cfg.batch_size,
        seed: stream_key(&[purpose::FINE_TUNE, cfg.seed]),
    };
    let mut params = global_params.clone();
    let mut entries = Vec::new();
    for epoch in 1..=cfg.epochs {
        let lr = cosine_lr(epoch - 1, cfg.epochs, cfg.base_lr);
        params = local_update(&mut local, ds, &params, &training, lr, epoch)
            .map_err(|e| e.context(format!("fine-tuning client {}", client.client_id)))?
            .0;
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            entries.push(Checkpoint {
                epoch,
                val_accuracy: accuracy_on(&params, ds, &client.partition.val)?,
                params: Some(Arc::new(params.clone())),
            });
        }
    }
    Ok(CheckpointHistory {
        client_id: client.client_id,
        entries,
    })
}
