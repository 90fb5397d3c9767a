//! In-FL stage: clients, local updates, aggregation weighting, the
//! scaling-factor controller and the round loop.

mod adjuster;
mod client;
mod rounds;
mod strategy;

pub use adjuster::AdjusterState;
pub use client::{accuracy_on, local_update, ClientState, LocalTraining};
pub use rounds::{
    aggregate_global, prepare_clients, read_round_records, run_in_fl, write_round_records,
    ClientRound, FlConfig, InFlOutcome, RoundRecord, ROUND_CSV_HEADER, WEIGHT_SUM_TOLERANCE,
};
pub use strategy::{compute_aggregation_weights, StrategyKind, DEFAULT_M_CAP, DEFAULT_Q_THRESHOLD};
