//! Fairness-aware federated learning simulator.
//!
//! The pipeline has two stages. In-FL trains a global classifier across
//! clients, aggregating local models with loss-sensitive weights whose
//! intensity (the scaling factor `m`) escalates automatically when client
//! losses drift apart. Post-FL fine-tunes the global model on each client and
//! picks one checkpoint per client so that validation accuracies stay within
//! a fixed spread.
//!
//! Modules, bottom-up:
//! - [`numkit`]: dense numerics, the classifier, gradients and optimizers.
//! - [`datagen`]: synthetic imbalanced multi-client data, splitting, resampling, CSV I/O.
//! - [`flcore`]: the round loop, local updates, aggregation strategies and the `m` controller.
//! - [`metrics`]: classification and group-fairness metrics.
//! - [`personalize`]: post-FL fine-tuning and fairness-constrained checkpoint selection.
//! - [`harness`]: experiment configuration, orchestration and report emission.

pub mod datagen;
pub mod error;
pub mod flcore;
pub mod harness;
pub mod metrics;
pub mod numkit;
pub mod personalize;

pub use error::{Error, Result};

pub use datagen::{ClientPartition, Dataset, Split, SyntheticConfig};
pub use flcore::{AdjusterState, ClientState, FlConfig, RoundRecord, StrategyKind};
pub use metrics::{ClassificationReport, ConfusionMatrix, FairnessReport, GroupedPredictions};
pub use numkit::{Gradients, Matrix, ModelParams, ModelSpec, OptimizerKind, OptimizerState};
pub use personalize::{CheckpointHistory, SelectionResult};
