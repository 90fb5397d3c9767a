use std::io::Cursor;

use fairfed::datagen::{
    generate_synthetic, read_dataset_from, split_dataset, write_dataset_to, SplitFractions,
};
use fairfed::flcore::{read_round_records, run_in_fl, write_round_records};
use fairfed::metrics::{read_predictions, write_predictions, GroupedPredictions};
use fairfed::personalize::{read_checkpoint_log, write_checkpoint_log, CheckpointHistory};
use fairfed::{FlConfig, ModelSpec, StrategyKind, SyntheticConfig};

#[test]
fn dataset_csv_round_trip_keeps_splits() {
    let cfg = SyntheticConfig {
        seed: 5,
        ..SyntheticConfig::default()
    };
    let mut ds = generate_synthetic(&cfg).unwrap();
    let parts = split_dataset(&ds, SplitFractions::default(), 1).unwrap();
    ds.assign_splits(&parts);
    let mut buf = Vec::new();
    write_dataset_to(&mut buf, &ds).unwrap();
    let back = read_dataset_from(Cursor::new(buf), cfg.num_classes).unwrap();
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.client_ids(), ds.client_ids());
    assert_eq!(back.splits(), ds.splits());
    assert_eq!(back.features(), ds.features());
    assert_eq!(back.partitions(), parts);
}

#[test]
fn round_records_round_trip() {
    let cfg = SyntheticConfig {
        client_sizes: vec![40, 30, 20],
        num_clients: 3,
        client_noise_scales: vec![1.0; 3],
        num_classes: 3,
        feature_dim: 4,
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    let parts = split_dataset(&ds, SplitFractions::default(), 0).unwrap();
    let fl = FlConfig {
        rounds: 3,
        local_epochs: 1,
        batch_size: 16,
        base_lr: 0.05,
        strategy: StrategyKind::fed_auto(),
        ..FlConfig::default()
    };
    let out = run_in_fl(&ds, &parts, &ModelSpec::softmax_regression(4, 3), &fl).unwrap();
    let mut buf = Vec::new();
    write_round_records(&mut buf, &out.records).unwrap();
    let back = read_round_records(Cursor::new(buf)).unwrap();
    assert_eq!(back, out.records);
}

#[test]
fn predictions_round_trip() {
    let mut preds = GroupedPredictions::default();
    preds.push_group(0, &[0, 1, 2], &[0, 2, 2]);
    preds.push_group(1, &[1, 1], &[1, 0]);
    let mut buf = Vec::new();
    write_predictions(&mut buf, &preds).unwrap();
    assert_eq!(read_predictions(Cursor::new(buf)).unwrap(), preds);
}

#[test]
fn checkpoint_log_round_trip() {
    let histories = vec![
        CheckpointHistory::from_log(0, &[(1, 0.5), (2, 0.625)]).unwrap(),
        CheckpointHistory::from_log(1, &[(1, 0.75), (2, 0.7), (3, 0.8)]).unwrap(),
    ];
    let mut buf = Vec::new();
    write_checkpoint_log(&mut buf, &histories).unwrap();
    assert_eq!(read_checkpoint_log(Cursor::new(buf)).unwrap(), histories);
}
