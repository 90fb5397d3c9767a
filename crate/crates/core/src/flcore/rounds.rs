//! The in-FL round loop.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::flcore::client::{accuracy_on, local_update, ClientState, LocalTraining};
use crate::flcore::{compute_aggregation_weights, AdjusterState, StrategyKind};
use crate::metrics::accuracy_variance;
use crate::numkit::rng::{purpose, RngStream};
use crate::numkit::{cosine_lr, linear_combination_params, ModelParams, ModelSpec, OptimizerKind};

/// Weights must sum to one within this tolerance before aggregation.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub client_fraction: f64,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Oversample minority classes in each client's train split.
    pub rebalance: bool,
    /// Let FedAuto's `m` step down when losses converge.
    pub allow_decrease: bool,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            local_epochs: 5,
            batch_size: 128,
            base_lr: 1e-4,
            client_fraction: 1.0,
            strategy: StrategyKind::fed_auto(),
            seed: 0,
            optimizer: OptimizerKind::Adam,
            rebalance: true,
            allow_decrease: false,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation(
                "rounds, local_epochs and batch_size must all be at least 1",
            ));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::validation("base_lr must be finite and >= 0"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::validation("client_fraction must be in (0, 1]"));
        }
        self.strategy.validate()
    }

    pub fn local_training(&self) -> LocalTraining {
        LocalTraining {
            epochs: self.local_epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

/// One client's line in a round's audit record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRound {
    pub client_id: usize,
    pub loss: f64,
    pub weight: f64,
    /// Validation accuracy of the client's freshly trained local model.
    pub val_accuracy_client: f64,
    /// Validation accuracy of the new global model on this client.
    pub val_accuracy_global: f64,
}

/// Audit row for one communication round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub strategy: StrategyKind,
    /// Scaling factor in effect; `None` for strategies without one.
    pub m: Option<u32>,
    pub clients: Vec<ClientRound>,
}

impl RoundRecord {
    pub fn weight_sum(&self) -> f64 {
        self.clients.iter().map(|c| c.weight).sum()
    }

    /// Population variance of the global model's per-client validation accuracy.
    pub fn global_val_variance(&self) -> f64 {
        let accs: Vec<f64> = self.clients.iter().map(|c| c.val_accuracy_global).collect();
        accuracy_variance(&accs)
    }
}

/// `θ = Σ w_c θ_c`, reduced in the given (client-id) order.
pub fn aggregate_global(client_params: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    if client_params.len() != weights.len() {
        return Err(Error::dimension(
            "aggregate_global",
            client_params.len(),
            weights.len(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::validation(format!(
            "aggregation weights must be nonnegative and sum to 1 (sum = {total})"
        )));
    }
    let terms: Vec<(f64, &ModelParams)> = weights.iter().copied().zip(client_params).collect();
    linear_combination_params(&terms)
}

/// Result of the in-FL stage.
#[derive(Clone, Debug)]
pub struct InFlOutcome {
    pub global: ModelParams,
    pub records: Vec<RoundRecord>,
    /// Scaling-factor history for FedAuto, empty otherwise.
    pub m_trajectory: Vec<(usize, u32)>,
}

fn selected_clients(num_clients: usize, fraction: f64, seed: u64, round: usize) -> Vec<usize> {
    let k = ((fraction * num_clients as f64).ceil() as usize).clamp(1, num_clients);
    let mut ids: Vec<usize> = (0..num_clients).collect();
    if k < num_clients {
        let mut rng = RngStream::keyed(seed, &[purpose::SELECT, round as u64]);
        ids.shuffle(&mut rng);
        ids.truncate(k);
        ids.sort_unstable();
    }
    ids
}

/// Builds client states from partitions (with the configured rebalancing).
pub fn prepare_clients(
    ds: &Dataset,
    partitions: &[ClientPartition],
    cfg: &FlConfig,
) -> Result<Vec<ClientState>> {
    partitions
        .iter()
        .map(|p| {
            ClientState::new(
                p.clone(),
                ds,
                cfg.optimizer,
                cfg.rebalance.then_some(cfg.seed),
            )
        })
        .collect()
}

/// Runs the full in-FL stage: `cfg.rounds` rounds of distribute, local
/// update, weight and aggregate, starting from a seeded initialization.
///
/// Local updates within a round run in parallel; every client draws from its
/// own random stream and aggregation reduces in client-id order, so the
/// output is identical to a sequential run.
pub fn run_in_fl(
    ds: &Dataset,
    partitions: &[ClientPartition],
    spec: &ModelSpec,
    cfg: &FlConfig,
) -> Result<InFlOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if partitions.is_empty() {
        return Err(Error::validation("no clients"));
    }
    if spec.input_dim != ds.feature_dim() || spec.num_classes != ds.num_classes() {
        return Err(Error::dimension(
            "run_in_fl model spec",
            format!("{} -> {}", ds.feature_dim(), ds.num_classes()),
            format!("{} -> {}", spec.input_dim, spec.num_classes),
        ));
    }
    let mut clients = prepare_clients(ds, partitions, cfg)?;
    let mut global = spec.init(cfg.seed)?;
    let mut adjuster = AdjusterState::new();
    adjuster.allow_decrease = cfg.allow_decrease;
    let training = cfg.local_training();
    let mut records = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let lr = cosine_lr(round - 1, cfg.rounds, cfg.base_lr);
        let selected = selected_clients(clients.len(), cfg.client_fraction, cfg.seed, round);
        let global_ref = &global;
        let updates: Vec<(usize, ModelParams, f64)> = clients
            .par_iter_mut()
            .enumerate()
            .filter(|(pos, _)| selected.binary_search(pos).is_ok())
            .map(|(pos, c)| {
                local_update(c, ds, global_ref, &training, lr, round)
                    .map(|(p, loss)| (pos, p, loss))
            })
            .collect::<Result<_>>()?;

        let losses: Vec<f64> = updates.iter().map(|u| u.2).collect();
        let counts: Vec<usize> = updates.iter().map(|u| clients[u.0].sample_count).collect();
        let m = match cfg.strategy {
            StrategyKind::FedAuto { q_threshold, m_cap } => {
                Some(adjuster.update(round, &losses, q_threshold, m_cap))
            }
            StrategyKind::FedExp { m } => Some(m),
            _ => None,
        };
        let weights =
            compute_aggregation_weights(&cfg.strategy, &losses, &counts, Some(&adjuster))?;
        let local_params: Vec<ModelParams> = updates.iter().map(|u| u.1.clone()).collect();
        global = aggregate_global(&local_params, &weights)?;

        let global_ref = &global;
        let rows: Vec<ClientRound> = updates
            .par_iter()
            .zip(weights.par_iter())
            .map(|((pos, local, loss), &weight)| {
                let client = &clients[*pos];
                let val = &client.partition.val;
                Ok(ClientRound {
                    client_id: client.client_id,
                    loss: *loss,
                    weight,
                    val_accuracy_client: accuracy_on(local, ds, val)?,
                    val_accuracy_global: accuracy_on(global_ref, ds, val)?,
                })
            })
            .collect::<Result<_>>()?;
        records.push(RoundRecord {
            round,
            strategy: cfg.strategy,
            m,
            clients: rows,
        });
    }

    Ok(InFlOutcome {
        global,
        records,
        m_trajectory: if cfg.strategy.is_auto() {
            adjuster.history().to_vec()
        } else {
            Vec::new()
        },
    })
}

pub const ROUND_CSV_HEADER: [&str; 8] = [
    "round",
    "strategy",
    "m",
    "client_id",
    "loss",
    "weight",
    "val_accuracy_client",
    "val_accuracy_global",
];

/// Writes one CSV row per (round, client).
pub fn write_round_records<W: Write>(writer: W, records: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ROUND_CSV_HEADER)?;
    for r in records {
        let strategy = r.strategy.to_string();
        let m = r.m.map(|m| m.to_string()).unwrap_or_default();
        for c in &r.clients {
            w.write_record([
                r.round.to_string(),
                strategy.clone(),
                m.clone(),
                c.client_id.to_string(),
                c.loss.to_string(),
                c.weight.to_string(),
                c.val_accuracy_client.to_string(),
                c.val_accuracy_global.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<round records>", e))?;
    Ok(())
}

/// Parses the CSV written by [`write_round_records`], regrouping rows by round.
pub fn read_round_records<R: Read>(reader: R) -> Result<Vec<RoundRecord>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(ROUND_CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "round record header must be `{}`",
                ROUND_CSV_HEADER.join(",")
            ),
        });
    }
    let mut out: Vec<RoundRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |field: &str| Error::Parse {
            line,
            message: format!("bad {field}"),
        };
        let round: usize = rec[0].parse().map_err(|_| err("round"))?;
        let strategy: StrategyKind = rec[1].parse().map_err(|_| err("strategy"))?;
        let m = if rec[2].is_empty() {
            None
        } else {
            Some(rec[2].parse().map_err(|_| err("m"))?)
        };
        let f = |i: usize, name: &str| rec[i].parse::<f64>().map_err(|_| err(name));
        let row = ClientRound {
            client_id: rec[3].parse().map_err(|_| err("client_id"))?,
            loss: f(4, "loss")?,
            weight: f(5, "weight")?,
            val_accuracy_client: f(6, "val_accuracy_client")?,
            val_accuracy_global: f(7, "val_accuracy_global")?,
        };
        match out.last_mut() {
            Some(last) if last.round == round && last.strategy == strategy => {
                last.clients.push(row)
            }
            _ => out.push(RoundRecord {
                round,
                strategy,
                m,
                clients: vec![row],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_synthetic, split_dataset, SplitFractions, SyntheticConfig};

    fn small_setup() -> (Dataset, Vec<ClientPartition>, ModelSpec) {
        let ds = generate_synthetic(&SyntheticConfig {
            seed: 21,
            ..Default::default()
        })
        .unwrap();
        let parts = split_dataset(&ds, SplitFractions::default(), 21).unwrap();
        (ds, parts, ModelSpec::softmax_regression(16, 9))
    }

    fn quick(strategy: StrategyKind) -> FlConfig {
        FlConfig {
            rounds: 4,
            local_epochs: 1,
            batch_size: 32,
            base_lr: 0.05,
            strategy,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn single_round_single_client_returns_local_model() {
        let (ds, parts, spec) = small_setup();
        let cfg = FlConfig {
            rounds: 1,
            ..quick(StrategyKind::FedAvg)
        };
        let out = run_in_fl(&ds, &parts[..1], &spec, &cfg).unwrap();
        let mut client = prepare_clients(&ds, &parts[..1], &cfg).unwrap().remove(0);
        let init = spec.init(cfg.seed).unwrap();
        let (local, _) = local_update(
            &mut client,
            &ds,
            &init,
            &cfg.local_training(),
            cfg.base_lr,
            1,
        )
        .unwrap();
        assert_eq!(out.global, local);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].clients[0].weight, 1.0);
    }

    #[test]
    fn weights_normalized_and_m_monotone() {
        let (ds, parts, spec) = small_setup();
        let out = run_in_fl(&ds, &parts, &spec, &quick(StrategyKind::fed_auto())).unwrap();
        for r in &out.records {
            assert!((r.weight_sum() - 1.0).abs() < 1e-9);
            assert!(r.clients.iter().all(|c| c.weight >= 0.0));
        }
        let ms: Vec<u32> = out.records.iter().map(|r| r.m.unwrap()).collect();
        assert!(ms.windows(2).all(|w| w[1] >= w[0] && w[1] - w[0] <= 1));
        assert!(ms.iter().all(|&m| (1..=3).contains(&m)));
        assert_eq!(out.m_trajectory.len(), 4);
    }

    #[test]
    fn infinite_threshold_matches_fixed_m1() {
        let (ds, parts, spec) = small_setup();
        let auto = run_in_fl(
            &ds,
            &parts,
            &spec,
            &quick(StrategyKind::FedAuto {
                q_threshold: f64::INFINITY,
                m_cap: 3,
            }),
        )
        .unwrap();
        let fixed = run_in_fl(&ds, &parts, &spec, &quick(StrategyKind::FedExp { m: 1 })).unwrap();
        for (a, b) in auto.records.iter().zip(&fixed.records) {
            let wa: Vec<u64> = a.clients.iter().map(|c| c.weight.to_bits()).collect();
            let wb: Vec<u64> = b.clients.iter().map(|c| c.weight.to_bits()).collect();
            assert_eq!(wa, wb);
        }
        assert_eq!(auto.global, fixed.global);
    }

    #[test]
    fn runs_are_deterministic() {
        let (ds, parts, spec) = small_setup();
        let cfg = quick(StrategyKind::QFfl { q: 1.0 });
        let a = run_in_fl(&ds, &parts, &spec, &cfg).unwrap();
        let b = run_in_fl(&ds, &parts, &spec, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.global, b.global);
    }

    #[test]
    fn partial_participation_selects_ceiling() {
        let (ds, parts, spec) = small_setup();
        let cfg = FlConfig {
            client_fraction: 0.4,
            ..quick(StrategyKind::FedEqual)
        };
        let out = run_in_fl(&ds, &parts, &spec, &cfg).unwrap();
        for r in &out.records {
            assert_eq!(r.clients.len(), 3);
            assert!(r
                .clients
                .iter()
                .all(|c| (c.weight - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn aggregate_examples() {
        let spec = ModelSpec::softmax_regression(3, 2);
        let a = spec.init(1).unwrap();
        assert_eq!(
            aggregate_global(std::slice::from_ref(&a), &[1.0]).unwrap(),
            a
        );
        let same = aggregate_global(&[a.clone(), a.clone(), a.clone()], &[0.2, 0.3, 0.5]).unwrap();
        for (x, y) in same.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(aggregate_global(&[a.clone(), a.clone()], &[0.5, 0.6]).is_err());
        assert!(aggregate_global(std::slice::from_ref(&a), &[0.5, 0.5]).is_err());
    }

    #[test]
    fn round_csv_round_trips() {
        let (ds, parts, spec) = small_setup();
        for strategy in [StrategyKind::fed_auto(), StrategyKind::FedLoss] {
            let out = run_in_fl(&ds, &parts, &spec, &quick(strategy)).unwrap();
            let mut buf = Vec::new();
            write_round_records(&mut buf, &out.records).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            assert!(text.starts_with(
                "round,strategy,m,client_id,loss,weight,val_accuracy_client,val_accuracy_global\n"
            ));
            assert_eq!(text.lines().count(), 1 + 4 * 6);
            assert_eq!(read_round_records(buf.as_slice()).unwrap(), out.records);
        }
    }
}
