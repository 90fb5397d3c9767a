//! Post-FL stage: per-client fine-tuning from the global model and
//! fairness-constrained checkpoint selection.

mod finetune;
mod io;
mod select;

pub use finetune::{fine_tune_client, Checkpoint, CheckpointHistory, FineTuneConfig};
pub use io::{read_checkpoint_log, read_selection, write_checkpoint_log, write_selection};
pub use select::{select_personalized_models, Choice, SelectionResult, DEFAULT_DELTA};
