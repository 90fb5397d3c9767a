//! Report files written after an experiment.
//!
//! | file | content |
//! |------|---------|
//! | `in_fl_comparison.csv` | per-run classification and fairness metrics of the global model, per-strategy medians, averaged q-FFL row |
//! | `scaling_factor_study.csv` | fixed `m ∈ {2,3,4}` against auto with `M_cap ∈ {2,3,4}` (seed medians) |
//! | `gap_worst.csv` | per-group accuracy, gap and worst, before and after personalization |
//! | `selection.csv` | per-client peak and selected checkpoints |
//! | `summary.txt`, `summary.json` | human-readable and machine-readable summaries |
//!
//! Numbers use the shortest representation that round-trips, so equal
//! summaries produce byte-identical files. Rows labelled `median` aggregate
//! across seeds.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flcore::StrategyKind;
use crate::harness::config::scaling_study_strategies;
use crate::harness::experiment::{ExperimentSummary, RunSummary, StageEval};

pub const IN_FL_FILE: &str = "in_fl_comparison.csv";
pub const SCALING_FILE: &str = "scaling_factor_study.csv";
pub const GAP_WORST_FILE: &str = "gap_worst.csv";
pub const SELECTION_FILE: &str = "selection.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const SUMMARY_JSON: &str = "summary.json";

pub const SCALING_HEADER: [&str; 8] = [
    "config",
    "kind",
    "m",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "variance",
];
pub const SELECTION_HEADER: [&str; 10] = [
    "strategy",
    "seed",
    "client_id",
    "global_val_accuracy",
    "peak_epoch",
    "peak_accuracy",
    "selected_epoch",
    "selected_accuracy",
    "spread",
    "feasible",
];

/// Header of `in_fl_comparison.csv` for `num_clients` groups.
pub fn in_fl_header(num_clients: usize) -> Vec<String> {
    let fixed = [
        "strategy",
        "seed",
        "accuracy",
        "precision",
        "recall",
        "f1",
        "variance",
        "mean_gap",
        "mean_worst",
    ];
    fixed
        .iter()
        .map(|s| s.to_string())
        .chain((0..num_clients).map(|c| format!("acc_client_{c}")))
        .collect()
}

/// Header of `gap_worst.csv` for `num_clients` groups.
pub fn gap_worst_header(num_clients: usize) -> Vec<String> {
    ["stage", "strategy", "seed", "metric"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..num_clients).map(|c| format!("client_{c}")))
        .chain(std::iter::once("mean".to_string()))
        .collect()
}

/// Median of a nonempty list (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Metric vector of one evaluation in `in_fl_comparison.csv` column order.
fn stage_metrics(e: &StageEval) -> Vec<f64> {
    let r = &e.report;
    let f = &e.fairness;
    let mut v = vec![
        r.accuracy,
        r.precision,
        r.recall,
        r.f1,
        f.variance,
        f.mean_gap,
        f.mean_worst,
    ];
    v.extend(f.accuracies());
    v
}

fn column_medians(rows: &[Vec<f64>]) -> Vec<f64> {
    let width = rows.iter().map(Vec::len).min().unwrap_or(0);
    (0..width)
        .map(|j| median(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}

/// Strategies in first-appearance order with their runs.
fn by_strategy(summary: &ExperimentSummary) -> Vec<(StrategyKind, Vec<&RunSummary>)> {
    let mut out: Vec<(StrategyKind, Vec<&RunSummary>)> = Vec::new();
    for run in &summary.runs {
        match out.iter_mut().find(|(s, _)| *s == run.strategy) {
            Some((_, v)) => v.push(run),
            None => out.push((run.strategy, vec![run])),
        }
    }
    out
}

/// Seed-median metric row of `strategy` (in-FL stage), if it was run.
pub fn median_in_fl(summary: &ExperimentSummary, strategy: &StrategyKind) -> Option<Vec<f64>> {
    let rows: Vec<Vec<f64>> = summary
        .runs
        .iter()
        .filter(|r| r.strategy == *strategy)
        .map(|r| stage_metrics(&r.in_fl))
        .collect();
    (!rows.is_empty()).then(|| column_medians(&rows))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn record<I: IntoIterator<Item = String>>(prefix: &[String], values: I) -> Vec<String> {
    prefix.iter().cloned().chain(values).collect()
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn close(w: csv::Writer<BufWriter<File>>, dir: &Path, name: &str) -> Result<()> {
    let path = dir.join(name);
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::io(&path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(&path, e))
}

fn write_in_fl(summary: &ExperimentSummary, dir: &Path) -> Result<()> {
    let mut w = csv_writer(dir, IN_FL_FILE)?;
    w.write_record(in_fl_header(summary.num_clients))?;
    for run in &summary.runs {
        let prefix = [run.strategy.to_string(), run.seed.to_string()];
        w.write_record(record(
            &prefix,
            stage_metrics(&run.in_fl).into_iter().map(num),
        ))?;
    }
    let groups = by_strategy(summary);
    let mut qffl_medians = Vec::new();
    for (strategy, _) in &groups {
        let med = median_in_fl(summary, strategy).expect("strategy has runs");
        let prefix = [strategy.to_string(), "median".to_string()];
        w.write_record(record(&prefix, med.iter().copied().map(num)))?;
        if matches!(strategy, StrategyKind::QFfl { .. }) {
            qffl_medians.push(med);
        }
    }
    if qffl_medians.len() > 1 {
        let width = qffl_medians[0].len();
        let avg = (0..width)
            .map(|j| qffl_medians.iter().map(|m| m[j]).sum::<f64>() / qffl_medians.len() as f64);
        let prefix = ["qffl:avg".to_string(), "median".to_string()];
        w.write_record(record(&prefix, avg.map(num)))?;
    }
    close(w, dir, IN_FL_FILE)
}

fn write_scaling(summary: &ExperimentSummary, dir: &Path) -> Result<()> {
    let mut w = csv_writer(dir, SCALING_FILE)?;
    w.write_record(SCALING_HEADER)?;
    for s in scaling_study_strategies(summary.q_threshold) {
        let Some(med) = median_in_fl(summary, &s) else {
            continue;
        };
        let (kind, m) = match s {
            StrategyKind::FedExp { m } => ("fixed", m),
            StrategyKind::FedAuto { m_cap, .. } => ("auto", m_cap),
            _ => unreachable!("study strategies are fixed or auto"),
        };
        let prefix = [s.to_string(), kind.to_string(), m.to_string()];
        w.write_record(record(&prefix, med[..5].iter().copied().map(num)))?;
    }
    close(w, dir, SCALING_FILE)
}

fn gap_worst_rows(e: &StageEval) -> [(&'static str, Vec<f64>); 3] {
    let g = &e.fairness.groups;
    let with_mean = |v: Vec<f64>| {
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let mut v = v;
        v.push(mean);
        v
    };
    [
        (
            "accuracy",
            with_mean(g.iter().map(|x| x.accuracy).collect()),
        ),
        ("gap", with_mean(g.iter().map(|x| x.gap).collect())),
        ("worst", with_mean(g.iter().map(|x| x.worst).collect())),
    ]
}

fn write_gap_worst(summary: &ExperimentSummary, dir: &Path) -> Result<()> {
    let mut w = csv_writer(dir, GAP_WORST_FILE)?;
    w.write_record(gap_worst_header(summary.num_clients))?;
    type Stage = fn(&RunSummary) -> Option<&StageEval>;
    let stages: [(&str, Stage); 2] = [
        ("in_fl", |r| Some(&r.in_fl)),
        ("post_fl", |r| r.post_fl.as_ref().map(|p| &p.personalized)),
    ];
    for (stage, get) in stages {
        for (strategy, runs) in by_strategy(summary) {
            let mut per_metric: [Vec<Vec<f64>>; 3] = Default::default();
            for run in &runs {
                let Some(e) = get(run) else { continue };
                for (k, (metric, values)) in gap_worst_rows(e).into_iter().enumerate() {
                    let prefix = [
                        stage.to_string(),
                        strategy.to_string(),
                        run.seed.to_string(),
                        metric.to_string(),
                    ];
                    w.write_record(record(&prefix, values.iter().copied().map(num)))?;
                    per_metric[k].push(values);
                }
            }
            for (k, metric) in ["accuracy", "gap", "worst"].iter().enumerate() {
                if per_metric[k].is_empty() {
                    continue;
                }
                let prefix = [
                    stage.to_string(),
                    strategy.to_string(),
                    "median".to_string(),
                    metric.to_string(),
                ];
                w.write_record(record(
                    &prefix,
                    column_medians(&per_metric[k]).into_iter().map(num),
                ))?;
            }
        }
    }
    close(w, dir, GAP_WORST_FILE)
}

fn write_selection_report(summary: &ExperimentSummary, dir: &Path) -> Result<()> {
    let mut w = csv_writer(dir, SELECTION_FILE)?;
    w.write_record(SELECTION_HEADER)?;
    for run in &summary.runs {
        let Some(post) = &run.post_fl else { continue };
        for (i, choice) in post.selection.choices.iter().enumerate() {
            let peak = &post.peaks[i];
            w.write_record([
                run.strategy.to_string(),
                run.seed.to_string(),
                choice.client_id.to_string(),
                num(post.global_val_accuracy[i]),
                peak.epoch.to_string(),
                num(peak.accuracy),
                choice.epoch.to_string(),
                num(choice.accuracy),
                num(post.selection.spread),
                post.selection.feasible.to_string(),
            ])?;
        }
    }
    close(w, dir, SELECTION_FILE)
}

/// Plain-text overview: one line per strategy with seed medians.
pub fn summary_text(summary: &ExperimentSummary) -> String {
    let mut out = String::new();
    let seeds = summary
        .runs
        .iter()
        .filter(|r| r.strategy == summary.runs[0].strategy)
        .count();
    let _ = writeln!(
        out,
        "{} runs, {} clients, {} seed(s); values are seed medians",
        summary.runs.len(),
        summary.num_clients,
        seeds
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<20} {:>9} {:>9} {:>10} {:>9} {:>9} {:>10} {:>10}",
        "strategy", "accuracy", "f1", "variance", "gap", "worst", "pers_acc", "pers_var"
    );
    for (strategy, runs) in by_strategy(summary) {
        let med = median_in_fl(summary, &strategy).expect("strategy has runs");
        let pers: Vec<&StageEval> = runs
            .iter()
            .filter_map(|r| r.post_fl.as_ref().map(|p| &p.personalized))
            .collect();
        let (pacc, pvar) = if pers.is_empty() {
            ("-".to_string(), "-".to_string())
        } else {
            (
                format!(
                    "{:.4}",
                    median(&pers.iter().map(|e| e.report.accuracy).collect::<Vec<_>>())
                ),
                format!(
                    "{:.6}",
                    median(&pers.iter().map(|e| e.fairness.variance).collect::<Vec<_>>())
                ),
            )
        };
        let _ = writeln!(
            out,
            "{:<20} {:>9.4} {:>9.4} {:>10.6} {:>9.4} {:>9.4} {:>10} {:>10}",
            strategy.to_string(),
            med[0],
            med[3],
            med[4],
            med[5],
            med[6],
            pacc,
            pvar
        );
    }
    let autos: Vec<&RunSummary> = summary
        .runs
        .iter()
        .filter(|r| r.m_trajectory.is_some())
        .collect();
    if !autos.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "scaling factor changes (round:m)");
        for r in autos {
            let mut last = None;
            let steps: Vec<String> = r
                .m_trajectory
                .iter()
                .flatten()
                .filter(|(_, m)| last.replace(*m) != Some(*m))
                .map(|(round, m)| format!("{round}:{m}"))
                .collect();
            let _ = writeln!(out, "  {} seed {}: {}", r.strategy, r.seed, steps.join(" "));
        }
    }
    out
}

/// Writes every report file into `dir`, creating it if needed.
pub fn emit_reports(summary: &ExperimentSummary, dir: &Path) -> Result<()> {
    if summary.runs.is_empty() {
        return Err(Error::validation("experiment summary has no runs"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_in_fl(summary, dir)?;
    if summary.scaling_factor_study {
        write_scaling(summary, dir)?;
    }
    write_gap_worst(summary, dir)?;
    write_selection_report(summary, dir)?;
    let path = dir.join(SUMMARY_TXT);
    fs::write(&path, summary_text(summary)).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(SUMMARY_JSON);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, summary)?;
    w.flush().map_err(|e| Error::io(&path, e))
}
