//! Experiment configuration.
//!
//! The file format is TOML restricted to flat `key = value` lines; keys are
//! grouped with dotted prefixes (`fl.rounds = 30`) or, equivalently, section
//! headers (`[fl]` then `rounds = 30`). Every key is optional except
//! `experiment.strategies`:
//!
//! | key | default | desk preset |
//! |-----|---------|-------------|
//! | `data.source` | `"synthetic"` (or `"csv"`) | |
//! | `data.path` | required when `data.source = "csv"` | |
//! | `data.num_clients` | 6 | |
//! | `data.num_classes` | 9 | |
//! | `data.feature_dim` | 16 | |
//! | `data.client_sizes` | `[147, 240, 165, 139, 77, 32]` | |
//! | `data.client_shift_scale` | 3.0 | |
//! | `data.client_noise_scales` | linear 0.8 → 1.12 | |
//! | `data.seed` | the run seed | |
//! | `model.hidden_dims` | `[]` (softmax regression) | |
//! | `fl.rounds` | 100 | 30 |
//! | `fl.local_epochs` | 5 | 3 |
//! | `fl.batch_size` | 128 | 32 |
//! | `fl.base_lr` | 1e-4 | 0.03 |
//! | `fl.client_fraction` | 1.0 | |
//! | `fl.q_threshold` | 1.5 | |
//! | `fl.m_cap` | 3 | |
//! | `fl.optimizer` | `"adam"` | |
//! | `fl.rebalance` | true | |
//! | `fl.allow_decrease` | false | |
//! | `post_fl.enabled` | true | |
//! | `post_fl.epochs` | 100 | 30 |
//! | `post_fl.delta` | 0.05 | |
//! | `post_fl.eval_every` | 1 | |
//! | `post_fl.base_lr` | `fl.base_lr` | |
//! | `experiment.strategies` | required | |
//! | `experiment.seeds` | `[0]` | |
//! | `experiment.output_dir` | `"fairfed-out"` | |
//! | `experiment.preset` | `"full"` (or `"desk"`) | |
//! | `experiment.scaling_factor_study` | false | |
//!
//! A bare `"fedauto"` strategy takes its threshold and cap from
//! `fl.q_threshold` and `fl.m_cap`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{
    linear_noise_scales, SyntheticConfig, DEFAULT_CLIENT_SIZES, DEFAULT_NOISE_RANGE,
    DEFAULT_SHIFT_SCALE,
};
use crate::error::{Error, Result};
use crate::flcore::{FlConfig, StrategyKind, DEFAULT_M_CAP, DEFAULT_Q_THRESHOLD};
use crate::numkit::{ModelSpec, OptimizerKind};
use crate::personalize::DEFAULT_DELTA;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Full,
    Desk,
}

/// Scale-dependent values a preset fills in for keys the file leaves unset.
struct PresetValues {
    rounds: usize,
    local_epochs: usize,
    batch_size: usize,
    base_lr: f64,
    post_epochs: usize,
}

impl Preset {
    fn values(self) -> PresetValues {
        match self {
            Preset::Full => PresetValues {
                rounds: 100,
                local_epochs: 5,
                batch_size: 128,
                base_lr: 1e-4,
                post_epochs: 100,
            },
            Preset::Desk => PresetValues {
                rounds: 30,
                local_epochs: 3,
                batch_size: 32,
                base_lr: 0.03,
                post_epochs: 30,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Csv { path: PathBuf, num_classes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PostFlConfig {
    pub enabled: bool,
    pub epochs: usize,
    pub delta: f64,
    pub eval_every: usize,
    pub base_lr: f64,
}

/// Fully resolved experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Fixed data seed; `None` reuses each run's seed.
    pub data_seed: Option<u64>,
    pub model: ModelSpec,
    /// Training settings shared by every run; `strategy` and `seed` are
    /// overwritten per run.
    pub fl: FlConfig,
    pub q_threshold: f64,
    pub m_cap: u32,
    pub post_fl: PostFlConfig,
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub preset: Preset,
    pub scaling_factor_study: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_clients: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    feature_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    client_sizes: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    client_shift_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    client_noise_scales: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_dims: Option<Vec<usize>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFl {
    #[serde(skip_serializing_if = "Option::is_none")]
    rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    local_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    client_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_cap: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rebalance: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    allow_decrease: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPostFl {
    #[serde(skip_serializing_if = "Option::is_none")]
    enabled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_lr: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    #[serde(skip_serializing_if = "Option::is_none")]
    strategies: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<Preset>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scaling_factor_study: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    data: RawData,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    fl: RawFl,
    #[serde(default)]
    post_fl: RawPostFl,
    #[serde(default)]
    experiment: RawExperiment,
}

/// 1-based line of the byte offset `pos`.
fn line_of(src: &str, pos: usize) -> usize {
    src[..pos.min(src.len())].matches('\n').count() + 1
}

/// Dotted key written on `line`, taking any `[section]` header into account.
fn key_at_line(src: &str, line: usize) -> Option<String> {
    let mut section = String::new();
    for (i, text) in src.lines().enumerate() {
        let t = text.trim();
        if t.starts_with('[') && t.ends_with(']') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if i + 1 == line {
            let lhs = t.split('=').next()?.trim();
            if lhs.is_empty() || t.starts_with('[') {
                return None;
            }
            return Some(if section.is_empty() {
                lhs.to_string()
            } else {
                format!("{section}.{lhs}")
            });
        }
    }
    None
}

/// Line on which dotted key `key` is assigned, if written in `src`.
fn locate_key(src: &str, key: &str) -> Option<usize> {
    let mut section = String::new();
    for (i, text) in src.lines().enumerate() {
        let t = text.trim();
        if t.starts_with('[') && t.ends_with(']') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        let Some((lhs, _)) = t.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim();
        let full = if section.is_empty() {
            lhs.to_string()
        } else {
            format!("{section}.{lhs}")
        };
        if full == key {
            return Some(i + 1);
        }
    }
    None
}

struct Ctx<'a> {
    src: &'a str,
}

impl Ctx<'_> {
    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            key: key.to_string(),
            line: locate_key(self.src, key),
            message: message.into(),
        }
    }

    fn check(&self, ok: bool, key: &str, message: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(self.err(key, message))
        }
    }
}

/// Parses configuration text. `desk_scale` forces the desk preset.
pub fn parse_config_str(src: &str, desk_scale: bool) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| {
        let line = e.span().map(|s| line_of(src, s.start));
        let key = line
            .and_then(|l| key_at_line(src, l))
            .unwrap_or_else(|| "<document>".to_string());
        Error::Config {
            key,
            line,
            message: e.message().trim().to_string(),
        }
    })?;
    resolve(raw, &Ctx { src }, desk_scale)
}

/// Reads and validates a configuration file.
pub fn parse_config(path: impl AsRef<Path>, desk_scale: bool) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&src, desk_scale)
}

fn resolve(raw: RawConfig, ctx: &Ctx<'_>, desk_scale: bool) -> Result<ExperimentConfig> {
    let RawConfig {
        data,
        model,
        fl,
        post_fl,
        experiment,
    } = raw;
    let preset = if desk_scale {
        Preset::Desk
    } else {
        experiment.preset.unwrap_or_default()
    };
    let pv = preset.values();

    let num_classes = data.num_classes.unwrap_or(9);
    ctx.check(num_classes >= 2, "data.num_classes", "must be at least 2")?;
    let source = data.source.as_deref().unwrap_or("synthetic");
    let (data_source, feature_dim) = match source {
        "synthetic" => {
            let num_clients = data.num_clients.unwrap_or(DEFAULT_CLIENT_SIZES.len());
            ctx.check(num_clients >= 1, "data.num_clients", "must be at least 1")?;
            let client_sizes = match data.client_sizes {
                Some(s) => s,
                None if num_clients == DEFAULT_CLIENT_SIZES.len() => DEFAULT_CLIENT_SIZES.to_vec(),
                None => {
                    return Err(ctx.err(
                        "data.client_sizes",
                        "required when data.num_clients differs from 6",
                    ))
                }
            };
            let syn = SyntheticConfig {
                num_clients,
                num_classes,
                feature_dim: data.feature_dim.unwrap_or(16),
                client_sizes,
                client_shift_scale: data.client_shift_scale.unwrap_or(DEFAULT_SHIFT_SCALE),
                client_noise_scales: data.client_noise_scales.unwrap_or_else(|| {
                    let (first, last) = DEFAULT_NOISE_RANGE;
                    linear_noise_scales(num_clients, first, last)
                }),
                seed: data.seed.unwrap_or(0),
            };
            ctx.check(
                syn.client_sizes.len() == num_clients,
                "data.client_sizes",
                "needs one entry per client",
            )?;
            ctx.check(
                syn.client_noise_scales.len() == num_clients,
                "data.client_noise_scales",
                "needs one entry per client",
            )?;
            syn.validate().map_err(|e| ctx.err("data", e.to_string()))?;
            let dim = syn.feature_dim;
            (DataSource::Synthetic(syn), dim)
        }
        "csv" => {
            let path = data
                .path
                .ok_or_else(|| ctx.err("data.path", "required when data.source = \"csv\""))?;
            let dim = data.feature_dim.ok_or_else(|| {
                ctx.err("data.feature_dim", "required when data.source = \"csv\"")
            })?;
            (DataSource::Csv { path, num_classes }, dim)
        }
        other => {
            return Err(ctx.err(
                "data.source",
                format!("unknown source `{other}` (expected \"synthetic\" or \"csv\")"),
            ))
        }
    };

    let model_spec = ModelSpec {
        input_dim: feature_dim,
        hidden_dims: model.hidden_dims.unwrap_or_default(),
        num_classes,
    };
    model_spec
        .validate()
        .map_err(|e| ctx.err("model.hidden_dims", e.to_string()))?;

    let q_threshold = fl.q_threshold.unwrap_or(DEFAULT_Q_THRESHOLD);
    ctx.check(q_threshold > 1.0, "fl.q_threshold", "must exceed 1")?;
    let m_cap = fl.m_cap.unwrap_or(DEFAULT_M_CAP);
    ctx.check(m_cap >= 1, "fl.m_cap", "must be at least 1")?;
    let fl_cfg = FlConfig {
        rounds: fl.rounds.unwrap_or(pv.rounds),
        local_epochs: fl.local_epochs.unwrap_or(pv.local_epochs),
        batch_size: fl.batch_size.unwrap_or(pv.batch_size),
        base_lr: fl.base_lr.unwrap_or(pv.base_lr),
        client_fraction: fl.client_fraction.unwrap_or(1.0),
        strategy: StrategyKind::FedAuto { q_threshold, m_cap },
        seed: 0,
        optimizer: fl.optimizer.unwrap_or_default(),
        rebalance: fl.rebalance.unwrap_or(true),
        allow_decrease: fl.allow_decrease.unwrap_or(false),
    };
    ctx.check(fl_cfg.rounds >= 1, "fl.rounds", "must be at least 1")?;
    ctx.check(
        fl_cfg.local_epochs >= 1,
        "fl.local_epochs",
        "must be at least 1",
    )?;
    ctx.check(
        fl_cfg.batch_size >= 1,
        "fl.batch_size",
        "must be at least 1",
    )?;
    ctx.check(
        fl_cfg.base_lr >= 0.0 && fl_cfg.base_lr.is_finite(),
        "fl.base_lr",
        "must be finite and >= 0",
    )?;
    ctx.check(
        fl_cfg.client_fraction > 0.0 && fl_cfg.client_fraction <= 1.0,
        "fl.client_fraction",
        "must be in (0, 1]",
    )?;

    let post = PostFlConfig {
        enabled: post_fl.enabled.unwrap_or(true),
        epochs: post_fl.epochs.unwrap_or(pv.post_epochs),
        delta: post_fl.delta.unwrap_or(DEFAULT_DELTA),
        eval_every: post_fl.eval_every.unwrap_or(1),
        base_lr: post_fl.base_lr.unwrap_or(fl_cfg.base_lr),
    };
    ctx.check(post.epochs >= 1, "post_fl.epochs", "must be at least 1")?;
    ctx.check(post.delta > 0.0, "post_fl.delta", "must be positive")?;
    ctx.check(
        post.eval_every >= 1,
        "post_fl.eval_every",
        "must be at least 1",
    )?;
    ctx.check(
        post.base_lr >= 0.0 && post.base_lr.is_finite(),
        "post_fl.base_lr",
        "must be finite and >= 0",
    )?;

    let names = experiment
        .strategies
        .ok_or_else(|| ctx.err("experiment.strategies", "at least one strategy is required"))?;
    ctx.check(
        !names.is_empty(),
        "experiment.strategies",
        "must not be empty",
    )?;
    let strategies = names
        .iter()
        .map(|s| {
            if s.trim().eq_ignore_ascii_case("fedauto") {
                Ok(StrategyKind::FedAuto { q_threshold, m_cap })
            } else {
                s.parse::<StrategyKind>()
                    .map_err(|e| ctx.err("experiment.strategies", e.to_string()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let seeds = experiment.seeds.unwrap_or_else(|| vec![0]);
    ctx.check(!seeds.is_empty(), "experiment.seeds", "must not be empty")?;

    Ok(ExperimentConfig {
        data: data_source,
        data_seed: data.seed,
        model: model_spec,
        fl: fl_cfg,
        q_threshold,
        m_cap,
        post_fl: post,
        strategies,
        seeds,
        output_dir: experiment
            .output_dir
            .unwrap_or_else(|| PathBuf::from("fairfed-out")),
        preset,
        scaling_factor_study: experiment.scaling_factor_study.unwrap_or(false),
    })
}

impl ExperimentConfig {
    /// Serializes every resolved value; parsing the result yields an equal config.
    pub fn to_toml(&self) -> String {
        let (data, feature_dim) = match &self.data {
            DataSource::Synthetic(s) => (
                RawData {
                    source: Some("synthetic".into()),
                    path: None,
                    num_clients: Some(s.num_clients),
                    num_classes: Some(s.num_classes),
                    feature_dim: Some(s.feature_dim),
                    client_sizes: Some(s.client_sizes.clone()),
                    client_shift_scale: Some(s.client_shift_scale),
                    client_noise_scales: Some(s.client_noise_scales.clone()),
                    seed: self.data_seed,
                },
                s.feature_dim,
            ),
            DataSource::Csv { path, num_classes } => (
                RawData {
                    source: Some("csv".into()),
                    path: Some(path.clone()),
                    num_classes: Some(*num_classes),
                    feature_dim: Some(self.model.input_dim),
                    seed: self.data_seed,
                    ..Default::default()
                },
                self.model.input_dim,
            ),
        };
        debug_assert_eq!(feature_dim, self.model.input_dim);
        let raw = RawConfig {
            data,
            model: RawModel {
                hidden_dims: Some(self.model.hidden_dims.clone()),
            },
            fl: RawFl {
                rounds: Some(self.fl.rounds),
                local_epochs: Some(self.fl.local_epochs),
                batch_size: Some(self.fl.batch_size),
                base_lr: Some(self.fl.base_lr),
                client_fraction: Some(self.fl.client_fraction),
                q_threshold: Some(self.q_threshold),
                m_cap: Some(self.m_cap),
                optimizer: Some(self.fl.optimizer),
                rebalance: Some(self.fl.rebalance),
                allow_decrease: Some(self.fl.allow_decrease),
            },
            post_fl: RawPostFl {
                enabled: Some(self.post_fl.enabled),
                epochs: Some(self.post_fl.epochs),
                delta: Some(self.post_fl.delta),
                eval_every: Some(self.post_fl.eval_every),
                base_lr: Some(self.post_fl.base_lr),
            },
            experiment: RawExperiment {
                strategies: Some(self.strategies.iter().map(|s| s.to_string()).collect()),
                seeds: Some(self.seeds.clone()),
                output_dir: Some(self.output_dir.clone()),
                preset: Some(self.preset),
                scaling_factor_study: Some(self.scaling_factor_study),
            },
        };
        toml::to_string(&raw).expect("config serializes to TOML")
    }

    /// Requested strategies, followed by the fixed-`m` and capped-auto
    /// variants of the scaling-factor study when it is enabled.
    pub fn all_strategies(&self) -> Vec<StrategyKind> {
        let mut out = self.strategies.clone();
        if self.scaling_factor_study {
            for s in scaling_study_strategies(self.q_threshold) {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
        out
    }

    pub fn synthetic_for_seed(&self, seed: u64) -> Option<SyntheticConfig> {
        match &self.data {
            DataSource::Synthetic(s) => Some(SyntheticConfig {
                seed: self.data_seed.unwrap_or(seed),
                ..s.clone()
            }),
            DataSource::Csv { .. } => None,
        }
    }
}

/// Fixed `m ∈ {2,3,4}` followed by auto with `M_cap ∈ {2,3,4}`.
pub fn scaling_study_strategies(q_threshold: f64) -> Vec<StrategyKind> {
    let fixed = (2..=4).map(|m| StrategyKind::FedExp { m });
    let auto = (2..=4).map(|m_cap| StrategyKind::FedAuto { q_threshold, m_cap });
    fixed.chain(auto).collect()
}
