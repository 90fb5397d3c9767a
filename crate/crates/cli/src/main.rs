use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Parser, Subcommand};
use fairfed::datagen::write_dataset;
use fairfed::harness::{build_dataset, emit_reports, parse_config, run_experiment, summary_text};
use fairfed::metrics::{
    classification_report, confusion_matrix, gap_worst_report, read_predictions,
    write_fairness_csv, FairnessSummary,
};
use fairfed::StrategyKind;

/// Environment variable that overrides the output directory of `run` and `evaluate`.
const OUT_DIR_ENV: &str = "FAIRFED_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "fairfed",
    version,
    about = "Fairness-aware federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured dataset (with split tags) and write it as CSV.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Data seed, used when the config sets no `data.seed` (default: first experiment seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        desk_scale: bool,
    },
    /// Run the two-stage pipeline for every (strategy, seed) pair and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to $FAIRFED_OUT_DIR, then `experiment.output_dir`.
        #[arg(long, env = OUT_DIR_ENV)]
        out_dir: Option<PathBuf>,
        /// Replaces the configured strategy list; repeatable.
        #[arg(long = "strategy")]
        strategies: Vec<StrategyKind>,
        /// Replaces the configured seed list; repeatable.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Apply the desk-scale preset to keys the config leaves unset.
        #[arg(long)]
        desk_scale: bool,
    },
    /// Compute classification and fairness metrics from a prediction log
    /// (`group,label,predicted`).
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, env = OUT_DIR_ENV)]
        out_dir: PathBuf,
    },
}

fn generate(config: &Path, out: &Path, seed: Option<u64>, desk_scale: bool) -> Result<()> {
    let cfg = parse_config(config, desk_scale)?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let (ds, _) = build_dataset(&cfg, seed)?;
    write_dataset(out, &ds)?;
    println!(
        "wrote {} samples for {} clients to {}",
        ds.len(),
        ds.num_clients(),
        out.display()
    );
    Ok(())
}

fn run(
    config: &Path,
    out_dir: Option<PathBuf>,
    strategies: Vec<StrategyKind>,
    seeds: Vec<u64>,
    desk_scale: bool,
) -> Result<()> {
    let mut cfg = parse_config(config, desk_scale)?;
    if !strategies.is_empty() {
        cfg.strategies = strategies;
    }
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    }
    let out_dir = out_dir.unwrap_or_else(|| cfg.output_dir.clone());
    let summary = run_experiment(&cfg, &out_dir)?;
    emit_reports(&summary, &out_dir)?;
    print!("{}", summary_text(&summary));
    Ok(())
}

fn evaluate(predictions: &Path, out_dir: &Path) -> Result<()> {
    let file = File::open(predictions)
        .map_err(|e| anyhow!("cannot open {}: {e}", predictions.display()))?;
    let preds = read_predictions(BufReader::new(file))?;
    let cm = confusion_matrix(&preds, preds.inferred_num_classes())?;
    let report = classification_report(&cm)?;
    let fairness = gap_worst_report(&preds)?;
    fs::create_dir_all(out_dir).map_err(|e| anyhow!("cannot create {}: {e}", out_dir.display()))?;

    let path = out_dir.join("fairness.csv");
    let f = File::create(&path).map_err(|e| anyhow!("cannot create {}: {e}", path.display()))?;
    write_fairness_csv(BufWriter::new(f), &fairness)?;

    let path = out_dir.join("metrics.json");
    let json = serde_json::json!({
        "classification": report,
        "fairness": FairnessSummary::from(&fairness),
    });
    let mut f =
        File::create(&path).map_err(|e| anyhow!("cannot create {}: {e}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, &json)?;
    writeln!(f)?;

    println!(
        "accuracy {:.4}  f1 {:.4}  variance {:.6}  mean gap {:.4}  mean worst {:.4}",
        report.accuracy, report.f1, fairness.variance, fairness.mean_gap, fairness.mean_worst
    );
    if !report.degenerate_classes().is_empty() {
        println!(
            "classes with zero denominators: {:?}",
            report.degenerate_classes()
        );
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData {
            config,
            out,
            seed,
            desk_scale,
        } => generate(&config, &out, seed, desk_scale),
        Command::Run {
            config,
            out_dir,
            strategies,
            seeds,
            desk_scale,
        } => run(&config, out_dir, strategies, seeds, desk_scale),
        Command::Evaluate {
            predictions,
            out_dir,
        } => {
            if out_dir.as_os_str().is_empty() {
                bail!("--out-dir must not be empty");
            }
            evaluate(&predictions, &out_dir)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
