use rand::seq::SliceRandom;

use crate::datagen::{rebalance_by_resampling, ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::numkit::rng::{purpose, RngStream};
use crate::numkit::{backward_grads, one_hot, ModelParams, OptimizerKind, OptimizerState};

/// One participant: its data split, latest local model, optimizer and loss.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_id: usize,
    /// Split as produced by the data pipeline, before any resampling.
    pub partition: ClientPartition,
    /// Train indices used for optimization (rebalanced when enabled).
    pub train_indices: Vec<usize>,
    pub params: Option<ModelParams>,
    pub optimizer: OptimizerState,
    /// `N_c`: train size before resampling.
    pub sample_count: usize,
    pub last_loss: Option<f64>,
}

impl ClientState {
    pub fn new(
        partition: ClientPartition,
        ds: &Dataset,
        optimizer: OptimizerKind,
        rebalance_seed: Option<u64>,
    ) -> Result<Self> {
        if partition.train.is_empty() {
            return Err(Error::validation(format!(
                "client {} has an empty train split",
                partition.client_id
            )));
        }
        let train_indices = match rebalance_seed {
            Some(seed) => rebalance_by_resampling(&partition, ds, seed).train,
            None => partition.train.clone(),
        };
        Ok(Self {
            client_id: partition.client_id,
            sample_count: partition.train.len(),
            train_indices,
            partition,
            params: None,
            optimizer: OptimizerState::new(optimizer),
            last_loss: None,
        })
    }
}

/// Knobs of one local training pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Runs `epochs` passes of shuffled mini-batch optimization from
/// `global_params` over the client's train indices.
///
/// Returns the updated parameters and the mean per-sample loss over the
/// final epoch. `round` only keys the shuffling stream and error context; the
/// client's params, optimizer state and last loss are updated in place.
pub fn local_update(
    client: &mut ClientState,
    ds: &Dataset,
    global_params: &ModelParams,
    training: &LocalTraining,
    lr: f64,
    round: usize,
) -> Result<(ModelParams, f64)> {
    let id = client.client_id;
    let context = |e: Error| e.context(format!("client {id} round {round}"));
    if training.epochs == 0 {
        return Err(Error::validation("local epochs must be at least 1"));
    }
    if training.batch_size == 0 {
        return Err(Error::validation("batch size must be at least 1"));
    }
    if global_params.input_dim() != ds.feature_dim()
        || global_params.output_dim() != ds.num_classes()
    {
        return Err(Error::dimension(
            "local_update model",
            format!("{} -> {}", ds.feature_dim(), ds.num_classes()),
            format!(
                "{} -> {}",
                global_params.input_dim(),
                global_params.output_dim()
            ),
        ));
    }
    let n = client.train_indices.len();
    let batch = training.batch_size.min(n);
    let mut rng = RngStream::keyed(
        training.seed,
        &[purpose::LOCAL, client.client_id as u64, round as u64],
    );
    let mut params = global_params.clone();
    let mut order = client.train_indices.clone();
    let mut epoch_loss = 0.0;
    for _ in 0..training.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let (x, labels) = ds.gather(chunk);
            let targets = one_hot(&labels, ds.num_classes())?;
            let (grads, loss) = backward_grads(&params, &x, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    client: client.client_id,
                    round,
                    loss,
                });
            }
            client
                .optimizer
                .step(&mut params, &grads, lr)
                .map_err(context)?;
            loss_sum += loss * chunk.len() as f64;
        }
        epoch_loss = loss_sum / n as f64;
    }
    if !params.is_finite() {
        return Err(Error::Divergence {
            client: client.client_id,
            round,
            loss: f64::NAN,
        });
    }
    client.params = Some(params.clone());
    client.last_loss = Some(epoch_loss);
    Ok((params, epoch_loss))
}

/// Fraction of the given samples the model classifies correctly.
pub fn accuracy_on(params: &ModelParams, ds: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::validation("accuracy of an empty sample set"));
    }
    let (x, labels) = ds.gather(indices);
    let preds = params.predict(&x)?;
    let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / indices.len() as f64)
}
