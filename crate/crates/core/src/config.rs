//! Experiment configuration, read from TOML.
//!
//! Every key has a default; the defaults reproduce the reference scenario
//! (40 clients, four label-flipping groups of eight plus eight clean clients,
//! Gaussian bids with mean 10 and variance 1, budget 45, delta 0.5,
//! alpha/beta/gamma = 0.15/0.3/1, batch size 16, learning rate 0.01).
//! The synthetic task (10 classes, 20 features, separation 2.0, 5 local
//! steps per round) is hard enough that the model is still improving after
//! 150 rounds, so client quality keeps showing up in the Shapley values.
//! Overrides use dotted keys, e.g. `bids.mode=tiered` or `train.local_steps=10`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{BidMode, BidSpec, BidTier, FlipGroup, PartitionSpec};
use crate::error::{Error, Result};
use crate::model::{Metric, TrainConfig};
use crate::reputation::{ProspectParams, UpdateParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Reputation-driven budgeted selection with Shapley assessment.
    #[default]
    Sbro,
    /// Random budgeted selection.
    Rs,
    /// Random budgeted selection among clean clients only.
    Hqrs,
    /// Every client, no budget.
    All,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sbro, Method::Rs, Method::Hqrs, Method::All];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sbro => "sbro",
            Method::Rs => "rs",
            Method::Hqrs => "hqrs",
            Method::All => "all",
        }
    }

    /// Whether the method must respect the budget.
    pub fn is_budgeted(self) -> bool {
        !matches!(self, Method::All)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Idx,
}

/// Upper bound on generated feature values (1 GiB of `f64`).
pub const MAX_SYNTHETIC_VALUES: usize = 1 << 27;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub num_classes: usize,
    pub input_dim: usize,
    pub class_separation: f64,
    /// Clean rows carved out server-side for Shapley evaluation.
    pub validation_size: usize,
    /// Clean rows used only to report global accuracy.
    pub test_size: usize,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            num_classes: 10,
            input_dim: 20,
            class_separation: 2.0,
            validation_size: 1000,
            test_size: 2000,
            idx_images: None,
            idx_labels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub samples_total: usize,
    pub flip_groups: Vec<FlipGroup>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            num_clients: 40,
            samples_total: 10_000,
            flip_groups: [0.9, 0.8, 0.7, 0.6, 0.0]
                .into_iter()
                .map(|ratio| FlipGroup { count: 8, ratio })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BidModeName {
    #[default]
    Gaussian,
    Tiered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BidConfig {
    pub mode: BidModeName,
    pub mean: f64,
    pub variance: f64,
    pub floor: f64,
    /// Bid per flip ratio, used when `mode = "tiered"`.
    pub tiers: Vec<BidTier>,
}

impl Default for BidConfig {
    fn default() -> Self {
        Self {
            mode: BidModeName::Gaussian,
            mean: 10.0,
            variance: 1.0,
            floor: 0.01,
            tiers: [(0.9, 6.0), (0.8, 8.0), (0.7, 10.0), (0.6, 12.0), (0.0, 14.0)]
                .into_iter()
                .map(|(ratio, bid)| BidTier { ratio, bid })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden layer widths; empty means multinomial logistic regression.
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_steps: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            local_steps: t.local_steps,
        }
    }
}

impl TrainSettings {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            local_steps: self.local_steps,
            seed,
        }
    }
}

/// Value assigned to the empty coalition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyValue {
    /// Validation metric of the incoming global model.
    #[default]
    PreviousGlobal,
    /// `1 / num_classes`.
    RandomGuess,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapleyConfig {
    pub empty_value: EmptyValue,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub rounds: usize,
    pub budget: f64,
    pub delta: f64,
    /// Seed for training order, random selection and model initialization.
    pub seed: u64,
    /// Seed for data generation, partitioning, label flips and bids.
    pub scenario_seed: u64,
    pub output_path: PathBuf,
    pub data: DataConfig,
    pub partition: PartitionConfig,
    pub bids: BidConfig,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub prospect: ProspectParams,
    pub update: UpdateParams,
    pub shapley: ShapleyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Sbro,
            rounds: 150,
            budget: 45.0,
            delta: 0.5,
            seed: 0,
            scenario_seed: 0,
            output_path: PathBuf::from("results.csv"),
            data: DataConfig::default(),
            partition: PartitionConfig::default(),
            bids: BidConfig::default(),
            model: ModelConfig::default(),
            train: TrainSettings::default(),
            prospect: ProspectParams::default(),
            update: UpdateParams::default(),
            shapley: ShapleyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text` and applies `key=value` overrides (dotted keys, values in
    /// TOML syntax; bare words are taken as strings) before validation.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::InvalidConfig(format!("TOML parse error: {e}")))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::InvalidConfig(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("serialize: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be >= 1".into()));
        }
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return Err(Error::InvalidConfig(format!("budget must be > 0, got {}", self.budget)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        let d = &self.data;
        if d.source == DataSource::Synthetic {
            if d.num_classes < 2 {
                return Err(Error::InvalidConfig("data.num_classes must be >= 2".into()));
            }
            if d.input_dim == 0 {
                return Err(Error::InvalidConfig("data.input_dim must be >= 1".into()));
            }
            if !(d.class_separation.is_finite() && d.class_separation > 0.0) {
                return Err(Error::InvalidConfig("data.class_separation must be > 0".into()));
            }
            let rows = d.validation_size + d.test_size + self.partition.samples_total;
            if rows.saturating_mul(d.input_dim) > MAX_SYNTHETIC_VALUES {
                return Err(Error::InvalidConfig(format!(
                    "synthetic data of {rows} rows x {} features exceeds {MAX_SYNTHETIC_VALUES} values",
                    d.input_dim
                )));
            }
        } else if d.idx_images.is_none() || d.idx_labels.is_none() {
            return Err(Error::InvalidConfig(
                "data.source = \"idx\" needs data.idx_images and data.idx_labels".into(),
            ));
        }
        if d.validation_size == 0 {
            return Err(Error::InvalidConfig("data.validation_size must be >= 1".into()));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::InvalidConfig("model.hidden widths must be >= 1".into()));
        }
        self.partition_spec().validate()?;
        self.train.with_seed(0).validate()?;
        if self.train.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("train.learning_rate must be > 0".into()));
        }
        self.prospect.validate()?;
        self.update.validate()?;
        if !(self.bids.floor.is_finite() && self.bids.floor > 0.0) {
            return Err(Error::InvalidConfig("bids.floor must be > 0".into()));
        }
        if self.bids.mode == BidModeName::Gaussian && (self.bids.variance.is_nan() || self.bids.variance < 0.0) {
            return Err(Error::InvalidConfig("bids.variance must be >= 0".into()));
        }
        Ok(())
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            num_clients: self.partition.num_clients,
            samples_total: self.partition.samples_total,
            flip_groups: self.partition.flip_groups.clone(),
            seed: 0,
        }
    }

    pub fn bid_spec(&self, seed: u64) -> BidSpec {
        let mode = match self.bids.mode {
            BidModeName::Gaussian => BidMode::Gaussian {
                mean: self.bids.mean,
                variance: self.bids.variance,
            },
            BidModeName::Tiered => BidMode::Tiered(self.bids.tiers.clone()),
        };
        BidSpec {
            mode,
            floor: self.bids.floor,
            seed,
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override {ov:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("bad override key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override path {key:?} crosses a non-table")))?;
    }
    cur.insert(last.to_string(), parse_override_value(raw.trim()));
    Ok(())
}
