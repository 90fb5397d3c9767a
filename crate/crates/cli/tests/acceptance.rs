//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fairfed::flcore::{
    aggregate_global, compute_aggregation_weights, run_in_fl, AdjusterState, FlConfig, StrategyKind,
};
use fairfed::harness::{build_dataset, parse_config_str, run_experiment, ExperimentSummary};
use fairfed::metrics::{accuracy_variance, gap_worst_report, GroupedPredictions, Prediction};
use fairfed::numkit::{
    backward_grads, finite_diff_grad, one_hot, Matrix, ModelParams, ModelSpec, RngStream,
};
use fairfed::personalize::{select_personalized_models, CheckpointHistory};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_losses(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..4.0)).collect()
}

fn all_strategies(rng: &mut RngStream) -> Vec<StrategyKind> {
    vec![
        StrategyKind::FedAvg,
        StrategyKind::FedEqual,
        StrategyKind::FedLoss,
        StrategyKind::FedExp {
            m: rng.random_range(1..=4),
        },
        StrategyKind::QFfl {
            q: [0.0, 1.0, 5.0][rng.random_range(0..3)],
        },
        StrategyKind::fed_auto(),
    ]
}

fn loss_sensitive(s: &StrategyKind) -> bool {
    match s {
        StrategyKind::FedLoss | StrategyKind::FedExp { .. } | StrategyKind::FedAuto { .. } => true,
        StrategyKind::QFfl { q } => *q > 0.0,
        _ => false,
    }
}

fn adjuster_at(m: u32) -> AdjusterState {
    let mut a = AdjusterState::new();
    for round in 1..m as usize {
        a.update(round, &[1.0, 10.0], 1.5, m);
    }
    a
}

fn weights(s: &StrategyKind, losses: &[f64], counts: &[usize], adj: &AdjusterState) -> Vec<f64> {
    compute_aggregation_weights(s, losses, counts, Some(adj)).expect("valid inputs")
}

fn criterion_1() -> Outcome {
    let v = accuracy_variance(&[0.611, 0.612, 0.658, 0.653, 0.535, 0.467]);
    check((v - 0.00461).abs() <= 5e-5, format!("variance = {v:.6}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(2, 0);
    for case in 0..1000 {
        let n = rng.random_range(1..=10);
        let losses = random_losses(&mut rng, n);
        let counts: Vec<usize> = (0..n).map(|_| rng.random_range(1..300)).collect();
        let adj = adjuster_at(rng.random_range(1..=3));
        for s in all_strategies(&mut rng) {
            let w = weights(&s, &losses, &counts, &adj);
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-12 {
                return Err(format!("case {case} {s}: weights {w:?} sum {sum}"));
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let pl: Vec<f64> = perm.iter().map(|&i| losses[i]).collect();
            let pc: Vec<usize> = perm.iter().map(|&i| counts[i]).collect();
            let pw = weights(&s, &pl, &pc, &adj);
            for (j, &i) in perm.iter().enumerate() {
                if (pw[j] - w[i]).abs() > 1e-12 {
                    return Err(format!("case {case} {s}: not permutation equivariant"));
                }
            }
            if loss_sensitive(&s) {
                let equal = vec![10; n];
                let we = weights(&s, &losses, &equal, &adj);
                for i in 0..n {
                    for j in 0..n {
                        if losses[i] > losses[j] && we[i] + 1e-15 < we[j] {
                            return Err(format!("case {case} {s}: higher loss got lower weight"));
                        }
                    }
                }
                let c = rng.random_range(0..n);
                let mut raised = losses.clone();
                raised[c] += rng.random_range(0.01..1.0);
                if weights(&s, &raised, &counts, &adj)[c] + 1e-15 < w[c] {
                    return Err(format!(
                        "case {case} {s}: raising a loss lowered its weight"
                    ));
                }
            }
        }
        let q0 = weights(&StrategyKind::QFfl { q: 0.0 }, &losses, &counts, &adj);
        let avg = weights(&StrategyKind::FedAvg, &losses, &counts, &adj);
        if q0.iter().zip(&avg).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(format!("case {case}: qffl:0 differs from fedavg"));
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(10),
        format!(
            "1000 loss vectors x 6 strategies in {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = RngStream::new(3, 0);
    for case in 0..500 {
        let q: f64 = rng.random_range(1.01..3.0);
        let cap: u32 = rng.random_range(1..=5);
        let n = rng.random_range(2..=8);
        let mut adj = AdjusterState::new();
        let mut prev = adj.m();
        for round in 1..=40 {
            let losses = random_losses(&mut rng, n)
                .into_iter()
                .map(|l| l + 0.05)
                .collect::<Vec<_>>();
            let max = losses.iter().copied().fold(f64::MIN, f64::max);
            let min = losses.iter().copied().fold(f64::MAX, f64::min);
            let should = max > q * min && prev < cap;
            let m = adj.update(round, &losses, q, cap);
            if m < prev || m > cap || m > prev + 1 || (m == prev + 1) != should {
                return Err(format!("case {case} round {round}: m {prev} -> {m}"));
            }
            prev = m;
        }
    }

    let cfg = parse_config_str(
        "experiment.strategies = [\"fedavg\"]\nexperiment.preset = \"desk\"\n",
        false,
    )
    .map_err(|e| e.to_string())?;
    let (ds, parts) = build_dataset(&cfg, 11).map_err(|e| e.to_string())?;
    let run = |strategy| {
        let fl = FlConfig {
            rounds: 6,
            strategy,
            seed: 11,
            ..cfg.fl.clone()
        };
        run_in_fl(&ds, &parts, &cfg.model, &fl).map_err(|e| e.to_string())
    };
    let auto = run(StrategyKind::FedAuto {
        q_threshold: f64::INFINITY,
        m_cap: 3,
    })?;
    let exp = run(StrategyKind::FedExp { m: 1 })?;
    let bits = |o: &fairfed::flcore::InFlOutcome| -> Vec<u64> {
        o.records
            .iter()
            .flat_map(|r| r.clients.iter().map(|c| c.weight.to_bits()))
            .collect()
    };
    check(
        bits(&auto) == bits(&exp) && auto.global == exp.global,
        "500 random loss sequences; Q = inf matches fedexp:1 bit for bit over 6 rounds".into(),
    )
}

fn random_params(rng: &mut RngStream, spec: &ModelSpec) -> ModelParams {
    let mut p = spec.init(rng.random()).expect("valid spec");
    for v in p.iter_mut() {
        *v = rng.random_range(-2.0..2.0);
    }
    p
}

fn criterion_4() -> Outcome {
    let mut rng = RngStream::new(4, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let spec = ModelSpec {
            input_dim: rng.random_range(1..=8),
            hidden_dims: if rng.random_bool(0.5) {
                vec![rng.random_range(1..=6)]
            } else {
                vec![]
            },
            num_classes: rng.random_range(2..=5),
        };
        let n = rng.random_range(1..=10);
        let params: Vec<ModelParams> = (0..n).map(|_| random_params(&mut rng, &spec)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let agg = aggregate_global(&params, &w).map_err(|e| e.to_string())?;
        let flat: Vec<Vec<f64>> = params.iter().map(ModelParams::to_flat).collect();
        for (k, got) in agg.to_flat().iter().enumerate() {
            let mut expect = 0.0;
            for c in 0..n {
                expect += w[c] * flat[c][k];
            }
            worst = worst.max((got - expect).abs());
        }
    }
    check(
        worst <= 1e-12,
        format!("max deviation {worst:.2e} over 100 sets"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = RngStream::new(5, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let input_dim = rng.random_range(1..=8);
        let classes = rng.random_range(2..=5);
        let spec = ModelSpec {
            input_dim,
            hidden_dims: if rng.random_bool(0.5) {
                vec![rng.random_range(1..=8)]
            } else {
                vec![]
            },
            num_classes: classes,
        };
        let params = random_params(&mut rng, &spec);
        let rows = rng.random_range(1..=8);
        let x: Vec<f64> = (0..rows * input_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let x = Matrix::new(rows, input_dim, x).map_err(|e| e.to_string())?;
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let t = one_hot(&labels, classes).map_err(|e| e.to_string())?;
        let (analytic, _) = backward_grads(&params, &x, &t).map_err(|e| e.to_string())?;
        let numeric = finite_diff_grad(&params, &x, &t, 1e-5).map_err(|e| e.to_string())?;
        for (a, n) in analytic.0.iter().zip(numeric.0.iter()) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            worst = worst.max((a - n).abs() / denom);
        }
    }
    check(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 100 models"),
    )
}

struct DeskRun {
    summary: ExperimentSummary,
    elapsed: Duration,
}

fn desk_run(dir: &Path) -> Result<DeskRun, String> {
    let cfg = parse_config_str(
        "experiment.strategies = [\"fedavg\", \"fedauto\"]\nexperiment.seeds = [0, 1, 2]\n",
        true,
    )
    .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let summary = run_experiment(&cfg, dir).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        summary,
        elapsed: start.elapsed(),
    })
}

fn median3(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_6(run: &DeskRun) -> Outcome {
    let pick = |s: &StrategyKind, f: fn(&fairfed::harness::RunSummary) -> f64| {
        median3(
            run.summary
                .runs
                .iter()
                .filter(|r| r.strategy == *s)
                .map(f)
                .collect(),
        )
    };
    let auto = StrategyKind::fed_auto();
    let avg = StrategyKind::FedAvg;
    let var_avg = pick(&avg, |r| r.in_fl.fairness.variance);
    let var_auto = pick(&auto, |r| r.in_fl.fairness.variance);
    let acc_avg = pick(&avg, |r| r.in_fl.report.accuracy);
    let acc_auto = pick(&auto, |r| r.in_fl.report.accuracy);
    check(
        var_auto < var_avg
            && (acc_auto - acc_avg).abs() <= 0.02
            && run.elapsed < Duration::from_secs(300),
        format!(
            "median variance fedavg {var_avg:.5} vs fedauto {var_auto:.5}; accuracy {acc_avg:.4} vs {acc_auto:.4}; {:.1}s",
            run.elapsed.as_secs_f64()
        ),
    )
}

/// Exhaustive optimum: `(feasible, spread, min, mean, total epochs)`.
fn brute_force(histories: &[CheckpointHistory], delta: f64) -> (bool, f64, f64, f64, usize) {
    let sizes: Vec<usize> = histories.iter().map(|h| h.entries().len()).collect();
    let mut idx = vec![0usize; histories.len()];
    let mut best: Option<(bool, f64, f64, f64, usize)> = None;
    loop {
        let picks: Vec<(f64, usize)> = idx
            .iter()
            .zip(histories)
            .map(|(&i, h)| (h.entries()[i].val_accuracy, h.entries()[i].epoch))
            .collect();
        let min = picks.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max = picks.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let mean = picks.iter().map(|p| p.0).sum::<f64>() / picks.len() as f64;
        let epochs = picks.iter().map(|p| p.1).sum::<usize>();
        let cand = (max - min <= delta, max - min, min, mean, epochs);
        let better = match &best {
            None => true,
            Some(b) => {
                if cand.0 != b.0 {
                    cand.0
                } else if !cand.0 && cand.1 != b.1 {
                    cand.1 < b.1
                } else if cand.2 != b.2 {
                    cand.2 > b.2
                } else if (cand.3 - b.3).abs() > 1e-12 {
                    cand.3 > b.3
                } else {
                    cand.4 < b.4
                }
            }
        };
        if better {
            best = Some(cand);
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return best.expect("at least one combination");
            }
            idx[k] += 1;
            if idx[k] < sizes[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn criterion_7(run: &DeskRun) -> Outcome {
    let seed0 = run
        .summary
        .runs
        .iter()
        .find(|r| r.strategy.is_auto() && r.seed == 0)
        .and_then(|r| r.post_fl.as_ref())
        .ok_or("missing post-FL result for fedauto seed 0")?;
    let improved = seed0
        .peaks
        .iter()
        .zip(&seed0.global_val_accuracy)
        .filter(|(p, g)| p.accuracy > **g)
        .count();
    let part_a = improved >= 5;

    let mut rng = RngStream::new(7, 0);
    let mut instances = 0;
    for case in 0..400 {
        let clients = rng.random_range(1..=4);
        let histories: Vec<CheckpointHistory> = (0..clients)
            .map(|c| {
                let h = rng.random_range(1..=10);
                let log: Vec<(usize, f64)> =
                    (1..=h).map(|e| (e, rng.random_range(0.3..1.0))).collect();
                CheckpointHistory::from_log(c, &log).expect("valid log")
            })
            .collect();
        let delta = if case % 2 == 0 {
            0.05
        } else {
            rng.random_range(0.005..0.4)
        };
        let got = select_personalized_models(&histories, delta).map_err(|e| e.to_string())?;
        let want = brute_force(&histories, delta);
        if got.feasible != want.0
            || (got.feasible && got.spread > delta)
            || (!got.feasible && got.spread != want.1)
            || got.min_accuracy() != want.2
            || (got.mean_accuracy() - want.3).abs() > 1e-12
            || got.total_epochs() != want.4
        {
            return Err(format!(
                "case {case}: selector {:?} vs brute force {want:?}",
                (
                    got.feasible,
                    got.spread,
                    got.min_accuracy(),
                    got.mean_accuracy(),
                    got.total_epochs()
                )
            ));
        }
        instances += 1;

        let peaks =
            select_personalized_models(&histories, f64::INFINITY).map_err(|e| e.to_string())?;
        for (choice, h) in peaks.choices.iter().zip(&histories) {
            if choice.epoch != h.peak().epoch {
                return Err(format!("case {case}: delta = inf did not return the peak"));
            }
        }
    }
    check(
        part_a,
        format!(
            "(a) {improved}/6 clients improved by fine-tuning; (b) {instances} instances match brute force; (c) delta = inf returns peaks"
        ),
    )
}

fn brute_gap_worst(samples: &[Prediction], groups: usize) -> Vec<(f64, f64)> {
    (0..groups)
        .map(|g| {
            let inside: Vec<&Prediction> = samples.iter().filter(|s| s.group == g).collect();
            let outside: Vec<&Prediction> = samples.iter().filter(|s| s.group != g).collect();
            let acc = |v: &[&Prediction]| {
                v.iter().filter(|s| s.truth == s.predicted).count() as f64 / v.len() as f64
            };
            let (a, b) = (acc(&inside), acc(&outside));
            ((a - b).abs(), a.min(b))
        })
        .collect()
}

fn criterion_8() -> Outcome {
    let mut two = GroupedPredictions::default();
    two.push_group(0, &[0; 10], &[0, 0, 0, 0, 0, 0, 0, 0, 1, 1]);
    two.push_group(1, &[0; 10], &[0, 0, 0, 0, 0, 0, 1, 1, 1, 1]);
    let r = gap_worst_report(&two).map_err(|e| e.to_string())?;
    let closed = (r.groups[0].gap - 0.2).abs() < 1e-12 && (r.groups[0].worst - 0.6).abs() < 1e-12;

    let mut rng = RngStream::new(8, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let groups = rng.random_range(2..=6);
        let classes = rng.random_range(2..=5);
        let mut samples = Vec::new();
        for g in 0..groups {
            for _ in 0..rng.random_range(1..=30) {
                samples.push(Prediction {
                    group: g,
                    truth: rng.random_range(0..classes),
                    predicted: rng.random_range(0..classes),
                });
            }
        }
        let preds = GroupedPredictions::new(groups, samples.clone()).map_err(|e| e.to_string())?;
        let report = gap_worst_report(&preds).map_err(|e| e.to_string())?;
        for (g, (gap, w)) in brute_gap_worst(&samples, groups).into_iter().enumerate() {
            worst = worst
                .max((report.groups[g].gap - gap).abs())
                .max((report.groups[g].worst - w).abs());
        }
    }
    check(
        closed && worst <= 1e-12,
        format!("closed form 0.8/0.6 ok = {closed}; max deviation {worst:.2e} over 100 fixtures"),
    )
}

fn collect_files(dir: &Path, base: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in fs::read_dir(dir).expect("readable dir") {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            collect_files(&path, base, out);
        } else {
            let rel = path.strip_prefix(base).expect("inside base").to_path_buf();
            out.insert(rel, fs::read(&path).expect("readable file"));
        }
    }
}

fn criterion_9() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fixed.cfg");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("run{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_fairfed"))
            .args(["run", "--config"])
            .arg(&config)
            .args(["--seed", "7", "--out-dir"])
            .arg(&out)
            .env_remove("FAIRFED_OUT_DIR")
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        let mut files = BTreeMap::new();
        collect_files(&out, &out, &mut files);
        outputs.push(files);
    }
    let csvs = outputs[0]
        .keys()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .count();
    check(
        csvs > 0 && outputs[0] == outputs[1],
        format!(
            "{} files ({csvs} CSV) byte-identical across two runs",
            outputs[0].len()
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let desk = desk_run(tmp.path());
    let results: Vec<(&str, Outcome)> = vec![
        ("1 metric oracle (variance of six accuracies)", criterion_1()),
        ("2 weight-function properties", criterion_2()),
        ("3 scaling-factor controller", criterion_3()),
        ("4 aggregation oracle", criterion_4()),
        ("5 gradient check", criterion_5()),
        (
            "6 desk-scale fairness trend",
            desk.as_ref().map_err(Clone::clone).and_then(criterion_6),
        ),
        (
            "7 post-FL suite",
            desk.as_ref().map_err(Clone::clone).and_then(criterion_7),
        ),
        ("8 gap/worst oracle", criterion_8()),
        ("9 CLI determinism", criterion_9()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
