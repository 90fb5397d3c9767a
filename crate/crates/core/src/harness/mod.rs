//! Experiment configuration, orchestration and report emission.

mod config;
mod experiment;
mod reports;

pub use config::{
    parse_config, parse_config_str, scaling_study_strategies, DataSource, ExperimentConfig,
    PostFlConfig, Preset,
};
pub use experiment::{
    build_dataset, run_artifact, run_experiment, run_single, ExperimentSummary, PostFlSummary,
    RunSummary, StageEval,
};
pub use reports::{
    emit_reports, gap_worst_header, in_fl_header, median, median_in_fl, summary_text,
    GAP_WORST_FILE, IN_FL_FILE, SCALING_FILE, SCALING_HEADER, SELECTION_FILE, SELECTION_HEADER,
    SUMMARY_JSON, SUMMARY_TXT,
};
