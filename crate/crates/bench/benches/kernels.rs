use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fairfed::datagen::{generate_synthetic, split_dataset, SplitFractions};
use fairfed::flcore::{aggregate_global, compute_aggregation_weights, run_in_fl};
use fairfed::numkit::{backward_grads, one_hot};
use fairfed::personalize::{select_personalized_models, CheckpointHistory};
use fairfed::{FlConfig, Matrix, ModelSpec, StrategyKind, SyntheticConfig};

fn gradients(c: &mut Criterion) {
    let spec = ModelSpec {
        input_dim: 16,
        hidden_dims: vec![32],
        num_classes: 9,
    };
    let params = spec.init(1).unwrap();
    let rows = 128;
    let x: Vec<f64> = (0..rows * 16)
        .map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0)
        .collect();
    let x = Matrix::new(rows, 16, x).unwrap();
    let labels: Vec<usize> = (0..rows).map(|i| i % 9).collect();
    let t = one_hot(&labels, 9).unwrap();
    c.bench_function("backward_grads 128x16 hidden 32", |b| {
        b.iter(|| backward_grads(black_box(&params), &x, &t).unwrap())
    });
}

fn weighting(c: &mut Criterion) {
    let losses: Vec<f64> = (0..100).map(|i| 0.2 + (i % 17) as f64 * 0.1).collect();
    let counts: Vec<usize> = (0..100).map(|i| 20 + i * 3).collect();
    for s in [
        StrategyKind::FedAvg,
        StrategyKind::QFfl { q: 2.0 },
        StrategyKind::fed_auto(),
    ] {
        c.bench_function(&format!("weights {s} x100 clients"), |b| {
            b.iter(|| compute_aggregation_weights(&s, black_box(&losses), &counts, None).unwrap())
        });
    }
    let spec = ModelSpec::softmax_regression(16, 9);
    let models: Vec<_> = (0..6).map(|i| spec.init(i).unwrap()).collect();
    let w = vec![1.0 / 6.0; 6];
    c.bench_function("aggregate 6 models", |b| {
        b.iter(|| aggregate_global(black_box(&models), &w).unwrap())
    });
}

fn one_round(c: &mut Criterion) {
    let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let parts = split_dataset(&ds, SplitFractions::default(), 0).unwrap();
    let spec = ModelSpec::softmax_regression(ds.feature_dim(), ds.num_classes());
    let cfg = FlConfig {
        rounds: 1,
        local_epochs: 3,
        batch_size: 32,
        base_lr: 0.03,
        ..FlConfig::default()
    };
    c.bench_function("in-FL round, 6 clients", |b| {
        b.iter(|| run_in_fl(&ds, &parts, &spec, black_box(&cfg)).unwrap())
    });
}

fn selection(c: &mut Criterion) {
    let histories: Vec<CheckpointHistory> = (0..6)
        .map(|client| {
            let log: Vec<(usize, f64)> = (1..=100)
                .map(|e| (e, 0.5 + ((e * 31 + client * 17) % 97) as f64 / 250.0))
                .collect();
            CheckpointHistory::from_log(client, &log).unwrap()
        })
        .collect();
    c.bench_function("select 6 clients x 100 epochs", |b| {
        b.iter_batched(
            || histories.clone(),
            |h| select_personalized_models(&h, 0.05).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, gradients, weighting, one_round, selection);
criterion_main!(benches);
