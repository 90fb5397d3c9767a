//! Orchestration of the two-stage pipeline over (strategy, seed) pairs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::{
    generate_synthetic, read_dataset, split_dataset, ClientPartition, Dataset, Split,
    SplitFractions,
};
use crate::error::{Error, Result};
use crate::flcore::{
    accuracy_on, prepare_clients, run_in_fl, write_round_records, FlConfig, StrategyKind,
};
use crate::harness::config::{DataSource, ExperimentConfig};
use crate::metrics::{
    classification_report, confusion_matrix, gap_worst_report, write_predictions,
    ClassificationReport, FairnessReport, GroupedPredictions,
};
use crate::numkit::rng::{purpose, stream_key};
use crate::numkit::ModelParams;
use crate::personalize::{
    fine_tune_client, select_personalized_models, write_checkpoint_log, write_selection, Choice,
    FineTuneConfig, SelectionResult,
};

/// Test-split evaluation of one set of models.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageEval {
    pub report: ClassificationReport,
    pub fairness: FairnessReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PostFlSummary {
    /// Validation accuracy of the global model on each client.
    pub global_val_accuracy: Vec<f64>,
    /// Best checkpoint of each client, ignoring the spread constraint.
    pub peaks: Vec<Choice>,
    pub selection: SelectionResult,
    /// Test-split evaluation of the selected personalized models.
    pub personalized: StageEval,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub rounds: usize,
    pub in_fl: StageEval,
    /// `(round, m)` for automatically adjusted strategies.
    pub m_trajectory: Option<Vec<(usize, u32)>>,
    pub post_fl: Option<PostFlSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub num_clients: usize,
    pub q_threshold: f64,
    pub scaling_factor_study: bool,
    /// Ordered by strategy, then seed.
    pub runs: Vec<RunSummary>,
}

/// Loads or generates the dataset for `seed`, with split tags assigned.
pub fn build_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Vec<ClientPartition>)> {
    let split_seed = stream_key(&[purpose::SPLIT, cfg.data_seed.unwrap_or(seed)]);
    let mut ds = match &cfg.data {
        DataSource::Synthetic(_) => {
            let syn = cfg
                .synthetic_for_seed(seed)
                .expect("synthetic source has a generator config");
            generate_synthetic(&syn)?
        }
        DataSource::Csv { path, num_classes } => {
            let ds = read_dataset(path, *num_classes)?;
            if ds.splits().iter().any(|s| *s != Split::Train) {
                let parts = ds.partitions();
                return Ok((ds, parts));
            }
            ds
        }
    };
    if ds.feature_dim() != cfg.model.input_dim {
        return Err(Error::dimension(
            "dataset features",
            cfg.model.input_dim.to_string(),
            ds.feature_dim().to_string(),
        ));
    }
    let parts = split_dataset(&ds, SplitFractions::default(), split_seed)?;
    ds.assign_splits(&parts);
    Ok((ds, parts))
}

/// Per-run artifact path, e.g. `runs/rounds_fedauto-1.5-3_seed7.csv`.
pub fn run_artifact(dir: &Path, kind: &str, strategy: &StrategyKind, seed: u64) -> PathBuf {
    dir.join("runs")
        .join(format!("{kind}_{}_seed{seed}.csv", strategy.slug()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn evaluate_models<'a>(
    ds: &Dataset,
    parts: &[ClientPartition],
    model_for: impl Fn(usize) -> &'a ModelParams,
) -> Result<(StageEval, GroupedPredictions)> {
    let mut preds = GroupedPredictions::default();
    for (pos, p) in parts.iter().enumerate() {
        let (x, y) = ds.gather(&p.test);
        let predicted = model_for(pos).predict(&x)?;
        preds.push_group(p.client_id, &y, &predicted);
    }
    let report = classification_report(&confusion_matrix(&preds, ds.num_classes())?)?;
    let fairness = gap_worst_report(&preds)?;
    Ok((StageEval { report, fairness }, preds))
}

/// Runs one (strategy, seed) pair and writes its per-run CSV files.
pub fn run_single(
    cfg: &ExperimentConfig,
    strategy: StrategyKind,
    seed: u64,
    ds: &Dataset,
    parts: &[ClientPartition],
    out_dir: &Path,
) -> Result<RunSummary> {
    let fl = FlConfig {
        strategy,
        seed,
        ..cfg.fl.clone()
    };
    let outcome = run_in_fl(ds, parts, &cfg.model, &fl)?;

    let path = run_artifact(out_dir, "rounds", &strategy, seed);
    let mut w = create(&path)?;
    write_round_records(&mut w, &outcome.records)?;
    finish(w, &path)?;

    let (in_fl, preds) = evaluate_models(ds, parts, |_| &outcome.global)?;
    let path = run_artifact(out_dir, "predictions", &strategy, seed);
    let mut w = create(&path)?;
    write_predictions(&mut w, &preds)?;
    finish(w, &path)?;

    let post_fl = if cfg.post_fl.enabled {
        Some(post_fl_stage(
            cfg,
            &fl,
            &outcome.global,
            ds,
            parts,
            out_dir,
        )?)
    } else {
        None
    };

    Ok(RunSummary {
        strategy,
        seed,
        rounds: outcome.records.len(),
        in_fl,
        m_trajectory: strategy.is_auto().then_some(outcome.m_trajectory),
        post_fl,
    })
}

fn post_fl_stage(
    cfg: &ExperimentConfig,
    fl: &FlConfig,
    global: &ModelParams,
    ds: &Dataset,
    parts: &[ClientPartition],
    out_dir: &Path,
) -> Result<PostFlSummary> {
    let ft = FineTuneConfig {
        epochs: cfg.post_fl.epochs,
        eval_every: cfg.post_fl.eval_every,
        batch_size: fl.batch_size,
        base_lr: cfg.post_fl.base_lr,
        optimizer: fl.optimizer,
        seed: fl.seed,
    };
    let clients = prepare_clients(ds, parts, fl)?;
    let histories = clients
        .par_iter()
        .map(|c| fine_tune_client(c, ds, global, &ft))
        .collect::<Result<Vec<_>>>()?;
    let global_val_accuracy = parts
        .iter()
        .map(|p| accuracy_on(global, ds, &p.val))
        .collect::<Result<Vec<_>>>()?;
    let peaks = histories
        .iter()
        .map(|h| {
            let c = h.peak();
            Choice {
                client_id: h.client_id,
                epoch: c.epoch,
                accuracy: c.val_accuracy,
            }
        })
        .collect();
    let selection = select_personalized_models(&histories, cfg.post_fl.delta)?;

    let chosen: Vec<&ModelParams> = histories
        .iter()
        .zip(&selection.choices)
        .map(|(h, c)| {
            h.get(c.epoch)
                .and_then(|cp| cp.params.as_deref())
                .ok_or_else(|| {
                    Error::validation(format!(
                        "no snapshot for client {} epoch {}",
                        c.client_id, c.epoch
                    ))
                })
        })
        .collect::<Result<_>>()?;
    let (personalized, _) = evaluate_models(ds, parts, |pos| chosen[pos])?;

    let path = run_artifact(out_dir, "checkpoints", &fl.strategy, fl.seed);
    let mut w = create(&path)?;
    write_checkpoint_log(&mut w, &histories)?;
    finish(w, &path)?;
    let path = run_artifact(out_dir, "selection", &fl.strategy, fl.seed);
    let mut w = create(&path)?;
    write_selection(&mut w, &selection)?;
    finish(w, &path)?;

    Ok(PostFlSummary {
        global_val_accuracy,
        peaks,
        selection,
        personalized,
    })
}

/// Runs every (strategy, seed) pair of the configuration, writing per-run
/// artifacts under `out_dir/runs` as each pair completes.
///
/// Pairs run concurrently. On failure the artifacts of the pairs that did
/// finish stay on disk and the first error (in strategy, seed order) is
/// returned.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let data = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            build_dataset(cfg, seed)
                .map_err(|e| e.context(format!("preparing data for seed {seed}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let num_clients = data[0].1.len();

    let strategies = cfg.all_strategies();
    let pairs: Vec<(StrategyKind, usize)> = strategies
        .iter()
        .flat_map(|&s| (0..cfg.seeds.len()).map(move |i| (s, i)))
        .collect();
    let results: Vec<Result<RunSummary>> = pairs
        .par_iter()
        .map(|&(strategy, i)| {
            let seed = cfg.seeds[i];
            let (ds, parts) = &data[i];
            run_single(cfg, strategy, seed, ds, parts, out_dir)
                .map_err(|e| e.context(format!("run {strategy} seed {seed}")))
        })
        .collect();
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ExperimentSummary {
        num_clients,
        q_threshold: cfg.q_threshold,
        scaling_factor_study: cfg.scaling_factor_study,
        runs,
    })
}
