//! Synthetic multi-client classification data with per-client size skew,
//! distribution shift and difficulty, plus splitting and class rebalancing.

mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::rng::{purpose, RngStream};
use crate::numkit::Matrix;

pub use io::{read_dataset, read_dataset_from, write_dataset, write_dataset_to};

/// Per-client sizes: skin-type counts 2944, 4807, 3306, 2781, 1531, 634
/// scaled by 1/20 and rounded.
pub const DEFAULT_CLIENT_SIZES: [usize; 6] = [147, 240, 165, 139, 77, 32];

/// Distance of each class anchor from the origin.
pub const ANCHOR_RADIUS: f64 = 3.0;

/// Default magnitude of each client's shift away from the shared anchors.
pub const DEFAULT_SHIFT_SCALE: f64 = 3.0;

/// Default noise scales of the first and last client; the ones between are
/// interpolated linearly, so later (smaller) clients are noisier.
pub const DEFAULT_NOISE_RANGE: (f64, f64) = (0.8, 1.12);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_clients: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub client_sizes: Vec<usize>,
    pub client_shift_scale: f64,
    pub client_noise_scales: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let num_clients = DEFAULT_CLIENT_SIZES.len();
        Self {
            num_clients,
            num_classes: 9,
            feature_dim: 16,
            client_sizes: DEFAULT_CLIENT_SIZES.to_vec(),
            client_shift_scale: DEFAULT_SHIFT_SCALE,
            client_noise_scales: linear_noise_scales(
                num_clients,
                DEFAULT_NOISE_RANGE.0,
                DEFAULT_NOISE_RANGE.1,
            ),
            seed: 0,
        }
    }
}

/// Noise scales rising linearly from `first` to `last`.
pub fn linear_noise_scales(n: usize, first: f64, last: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![first],
        _ => (0..n)
            .map(|i| first + (last - first) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::validation("num_clients must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::validation("num_classes must be at least 2"));
        }
        if self.feature_dim == 0 {
            return Err(Error::validation("feature_dim must be at least 1"));
        }
        if self.client_sizes.len() != self.num_clients {
            return Err(Error::validation(format!(
                "client_sizes has {} entries for {} clients",
                self.client_sizes.len(),
                self.num_clients
            )));
        }
        if let Some((c, &n)) = self
            .client_sizes
            .iter()
            .enumerate()
            .find(|(_, &n)| n < self.num_classes)
        {
            return Err(Error::validation(format!(
                "client {c} has {n} samples, fewer than {} classes",
                self.num_classes
            )));
        }
        if self.client_noise_scales.len() != self.num_clients {
            return Err(Error::validation(format!(
                "client_noise_scales has {} entries for {} clients",
                self.client_noise_scales.len(),
                self.num_clients
            )));
        }
        if self
            .client_noise_scales
            .iter()
            .any(|&s| !(s > 0.0 && s.is_finite()))
        {
            return Err(Error::validation(
                "noise scales must be positive and finite",
            ));
        }
        if !(self.client_shift_scale >= 0.0 && self.client_shift_scale.is_finite()) {
            return Err(Error::validation("client_shift_scale must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!("unknown split `{other}`"))),
        }
    }
}

/// Labelled samples from every client, stored as parallel arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    num_classes: usize,
    features: Matrix,
    labels: Vec<usize>,
    client_ids: Vec<usize>,
    splits: Vec<Split>,
}

impl Dataset {
    pub fn new(
        num_classes: usize,
        features: Matrix,
        labels: Vec<usize>,
        client_ids: Vec<usize>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || client_ids.len() != n || splits.len() != n {
            return Err(Error::dimension(
                "Dataset::new",
                format!("{n} rows in every column"),
                format!(
                    "labels {}, client_ids {}, splits {}",
                    labels.len(),
                    client_ids.len(),
                    splits.len()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::validation(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            num_classes,
            features,
            labels,
            client_ids,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_clients(&self) -> usize {
        self.client_ids.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn client_ids(&self) -> &[usize] {
        &self.client_ids
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Sample indices belonging to `client`, in dataset order.
    pub fn client_indices(&self, client: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.client_ids[i] == client)
            .collect()
    }

    /// Features and labels of the given rows.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Tags every sample with the split its partition assigns.
    pub fn assign_splits(&mut self, partitions: &[ClientPartition]) {
        for p in partitions {
            for (list, tag) in [
                (&p.train, Split::Train),
                (&p.val, Split::Val),
                (&p.test, Split::Test),
            ] {
                for &i in list {
                    self.splits[i] = tag;
                }
            }
        }
    }

    /// Rebuilds one partition per client from the stored split tags.
    pub fn partitions(&self) -> Vec<ClientPartition> {
        let mut parts: Vec<ClientPartition> = (0..self.num_clients())
            .map(ClientPartition::empty)
            .collect();
        for i in 0..self.len() {
            let p = &mut parts[self.client_ids[i]];
            match self.splits[i] {
                Split::Train => p.train.push(i),
                Split::Val => p.val.push(i),
                Split::Test => p.test.push(i),
            }
        }
        parts
    }
}

/// Train/val/test index lists of one client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPartition {
    pub client_id: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClientPartition {
    pub fn empty(client_id: usize) -> Self {
        Self {
            client_id,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fractions of each client's samples assigned to train, validation and test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(0.0..=1.0).contains(f))
            || ((all.iter().sum::<f64>()) - 1.0).abs() > 1e-9
        {
            return Err(Error::validation(format!(
                "split fractions {all:?} must be in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

fn unit_direction(rng: &mut RngStream, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Draws every client's samples around shared class anchors.
///
/// A sample of class `k` on client `c` is `anchor_k + shift_c + noise_c · z`
/// with `z` standard normal. Labels cycle through the classes so per-client
/// class counts differ by at most one. All samples are tagged `train` until
/// [`split_dataset`] assigns splits.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let dim = cfg.feature_dim;
    let mut anchor_rng = RngStream::keyed(cfg.seed, &[purpose::ANCHORS]);
    let anchors: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| {
            unit_direction(&mut anchor_rng, dim)
                .into_iter()
                .map(|x| x * ANCHOR_RADIUS)
                .collect()
        })
        .collect();

    let total: usize = cfg.client_sizes.iter().sum();
    let mut values = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    let mut client_ids = Vec::with_capacity(total);
    for (c, (&size, &noise)) in cfg
        .client_sizes
        .iter()
        .zip(&cfg.client_noise_scales)
        .enumerate()
    {
        let mut rng = RngStream::keyed(cfg.seed, &[purpose::CLIENT_DATA, c as u64]);
        let shift: Vec<f64> = unit_direction(&mut rng, dim)
            .into_iter()
            .map(|x| x * cfg.client_shift_scale)
            .collect();
        for i in 0..size {
            let label = i % cfg.num_classes;
            for (a, s) in anchors[label].iter().zip(&shift) {
                let z: f64 = rng.sample(StandardNormal);
                values.push(a + s + noise * z);
            }
            labels.push(label);
            client_ids.push(c);
        }
    }
    let features = Matrix::new(total, dim, values)?;
    Dataset::new(
        cfg.num_classes,
        features,
        labels,
        client_ids,
        vec![Split::Train; total],
    )
}

/// Minimum samples a client needs before it can be split.
pub const MIN_CLIENT_SAMPLES: usize = 5;

/// Stratified per-client split. A client's validation and test totals are the
/// rounded fractions of its size, apportioned across its classes by largest
/// remainder; everything else goes to train. Index lists come back sorted.
pub fn split_dataset(
    ds: &Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<Vec<ClientPartition>> {
    fractions.validate()?;
    let mut parts = Vec::with_capacity(ds.num_clients());
    for client in 0..ds.num_clients() {
        let indices = ds.client_indices(client);
        if indices.len() < MIN_CLIENT_SAMPLES {
            return Err(Error::validation(format!(
                "client {client} has {} samples; at least {MIN_CLIENT_SAMPLES} are needed to split",
                indices.len()
            )));
        }
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in indices {
            by_class.entry(ds.labels[i]).or_default().push(i);
        }
        let mut part = ClientPartition::empty(client);
        let cells: Vec<Vec<usize>> = by_class
            .into_iter()
            .map(|(class, mut cell)| {
                cell.sort_unstable();
                let mut rng =
                    RngStream::keyed(seed, &[purpose::SPLIT, client as u64, class as u64]);
                cell.shuffle(&mut rng);
                cell
            })
            .collect();
        let sizes: Vec<usize> = cells.iter().map(Vec::len).collect();
        let n_val = apportion(&sizes, fractions.val);
        let rest: Vec<usize> = sizes.iter().zip(&n_val).map(|(s, v)| s - v).collect();
        let total: usize = sizes.iter().sum();
        let test_share = fractions.test * total as f64 / rest.iter().sum::<usize>().max(1) as f64;
        let n_test = apportion(&rest, test_share.min(1.0));
        for ((cell, v), t) in cells.iter().zip(&n_val).zip(&n_test) {
            part.val.extend_from_slice(&cell[..*v]);
            part.test.extend_from_slice(&cell[*v..v + t]);
            part.train.extend_from_slice(&cell[v + t..]);
        }
        for (name, list) in [
            ("train", &part.train),
            ("val", &part.val),
            ("test", &part.test),
        ] {
            if list.is_empty() {
                return Err(Error::validation(format!(
                    "client {client} is too small: its {name} split would be empty"
                )));
            }
        }
        part.train.sort_unstable();
        part.val.sort_unstable();
        part.test.sort_unstable();
        parts.push(part);
    }
    Ok(parts)
}

/// Splits `round(fraction · Σ sizes)` across cells: each cell gets the floor
/// of its share and the leftover units go to the largest fractional parts
/// (ties to the lower cell index).
fn apportion(sizes: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = ((fraction * total as f64).round() as usize).min(total);
    let mut out: Vec<usize> = sizes
        .iter()
        .map(|&s| ((fraction * s as f64).floor() as usize).min(s))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    let frac = |i: usize| fraction * sizes[i] as f64 - out[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    let mut left = target.saturating_sub(out.iter().sum());
    for &i in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if out[i] < sizes[i] {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

/// Oversamples minority classes of the train split (with replacement) until
/// every class present matches the majority count. Validation and test lists
/// are returned untouched.
pub fn rebalance_by_resampling(
    partition: &ClientPartition,
    ds: &Dataset,
    seed: u64,
) -> ClientPartition {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in &partition.train {
        by_class.entry(ds.labels[i]).or_default().push(i);
    }
    let majority = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut out = partition.clone();
    for (&class, members) in &by_class {
        let deficit = majority - members.len();
        if deficit == 0 {
            continue;
        }
        let mut rng = RngStream::keyed(
            seed,
            &[purpose::RESAMPLE, partition.client_id as u64, class as u64],
        );
        out.train
            .extend((0..deficit).map(|_| members[rng.random_range(0..members.len())]));
    }
    out
}
