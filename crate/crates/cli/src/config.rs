//! Scenario files: TOML sections for the dataset, partition, client
//! behaviors, strategies, run parameters and output.
//!
//! ```toml
//! [dataset]
//! n_classes = 4
//! spread = 0.35
//!
//! [partition]
//! n_clients = 5
//! alpha = 100.0
//!
//! [[clients]]
//! id = 1
//! behavior = "type1"
//!
//! [[strategy]]
//! kind = "fedavg"
//!
//! [[strategy]]
//! kind = "feddrl"
//! stage1_initial_rounds = 600
//! [strategy.stage1]
//! lr_actor = 3e-4
//!
//! [run]
//! rounds = 30
//! ```
//!
//! Every section is optional and every key has a default. Unknown keys are
//! rejected.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use feddrl::env::{Behavior, LocalTrainOpts, WorldConfig};
use feddrl::orchestrator::{ExperimentConfig, FedDrlConfig, Strategy};
use feddrl::stage1::Stage1Config;
use feddrl::stage2::Stage2Config;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FEDPROX_MU: f64 = 0.01;
pub const DEFAULT_TYPE2_RATIO: f64 = 0.8;
pub const DEFAULT_TYPE3_PERIOD: usize = 2;
pub const DEFAULT_LOWQ_CAP: f64 = 0.5;
pub const DEFAULT_LOWQ_PERMUTE: f64 = 0.75;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot serialize config: {0}")]
    Serialize(String),
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub holdout_fraction: f64,
    pub task_hidden: Vec<usize>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            n_classes: w.n_classes,
            n_per_class: w.n_per_class,
            dim: w.dim,
            spread: w.spread,
            holdout_fraction: w.holdout_fraction,
            task_hidden: w.task_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub n_clients: usize,
    pub alpha: f64,
    /// Fixed partition seed; derived from the run seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            n_clients: w.n_clients,
            alpha: w.alpha,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorKind {
    Honest,
    Type1,
    Type2,
    Type3,
    Lowq,
}

/// One behavior override. Only the keys of the chosen behavior are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientEntry {
    /// 1-based client id.
    pub id: usize,
    pub behavior: BehaviorKind,
    /// type2 (or a type2 payload): share of foreign samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    /// type3: attack phase length in rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    /// type3: attack run on odd phases, `type1` or `type2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<BehaviorKind>,
    /// lowq: accuracy ceiling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    /// lowq: accuracy floor of the expected band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    /// lowq: share of classes whose labels are rotated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permute_ratio: Option<f64>,
}

impl ClientEntry {
    pub fn new(id: usize, behavior: BehaviorKind) -> Self {
        Self {
            id,
            behavior,
            ratio: None,
            period: None,
            payload: None,
            cap: None,
            floor: None,
            permute_ratio: None,
        }
    }

    fn to_behavior(&self, key: &str) -> Result<Behavior, ConfigError> {
        let forbid = |present: bool, field: &str| {
            if present {
                Err(invalid(
                    format!("{key}.{field}"),
                    format!("not used by behavior {:?}", self.behavior),
                ))
            } else {
                Ok(())
            }
        };
        let uses_ratio = self.behavior == BehaviorKind::Type2
            || (self.behavior == BehaviorKind::Type3 && self.payload == Some(BehaviorKind::Type2));
        forbid(self.ratio.is_some() && !uses_ratio, "ratio")?;
        if self.behavior != BehaviorKind::Type3 {
            forbid(self.period.is_some(), "period")?;
            forbid(self.payload.is_some(), "payload")?;
        }
        if self.behavior != BehaviorKind::Lowq {
            forbid(self.cap.is_some(), "cap")?;
            forbid(self.floor.is_some(), "floor")?;
            forbid(self.permute_ratio.is_some(), "permute_ratio")?;
        }
        let type2 = || Behavior::PoisonedData {
            foreign_ratio: self.ratio.unwrap_or(DEFAULT_TYPE2_RATIO),
        };
        let behavior = match self.behavior {
            BehaviorKind::Honest => Behavior::Honest,
            BehaviorKind::Type1 => Behavior::InitUpload,
            BehaviorKind::Type2 => type2(),
            BehaviorKind::Type3 => {
                let payload = match self.payload.unwrap_or(BehaviorKind::Type1) {
                    BehaviorKind::Type1 => Behavior::InitUpload,
                    BehaviorKind::Type2 => type2(),
                    other => {
                        return Err(invalid(
                            format!("{key}.payload"),
                            format!("must be type1 or type2, got {other:?}"),
                        ))
                    }
                };
                Behavior::Alternating {
                    period: self.period.unwrap_or(DEFAULT_TYPE3_PERIOD),
                    payload: Box::new(payload),
                }
            }
            BehaviorKind::Lowq => Behavior::LowQuality {
                accuracy_cap: self.cap.unwrap_or(DEFAULT_LOWQ_CAP),
                label_permute_ratio: self.permute_ratio.unwrap_or(DEFAULT_LOWQ_PERMUTE),
                accuracy_floor: self.floor,
            },
        };
        behavior.validate().map_err(|e| invalid(key, e.to_string()))?;
        Ok(behavior)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Fedavg,
    Fedprox,
    Feddrl,
}

impl StrategyKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fedavg" => Some(Self::Fedavg),
            "fedprox" => Some(Self::Fedprox),
            "feddrl" => Some(Self::Feddrl),
            _ => None,
        }
    }
}

/// One run entry of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub kind: StrategyKind,
    /// Label for outputs; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_initial_rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_initial_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1: Option<Stage1Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2: Option<Stage2Config>,
}

impl StrategyEntry {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            name: None,
            mu: None,
            warm_start: None,
            stage1_initial_rounds: None,
            stage2_initial_iterations: None,
            stage1: None,
            stage2: None,
        }
    }

    pub fn fedprox(mu: f64) -> Self {
        Self {
            mu: Some(mu),
            ..Self::new(StrategyKind::Fedprox)
        }
    }

    pub fn feddrl(cfg: &FedDrlConfig) -> Self {
        Self {
            warm_start: Some(cfg.warm_start),
            stage1_initial_rounds: cfg.stage1_initial_rounds,
            stage2_initial_iterations: cfg.stage2_initial_iterations,
            stage1: Some(cfg.stage1.clone()),
            stage2: Some(cfg.stage2.clone()),
            ..Self::new(StrategyKind::Feddrl)
        }
    }

    pub fn label(&self) -> &str {
        match (&self.name, self.kind) {
            (Some(n), _) => n,
            (None, StrategyKind::Fedavg) => "fedavg",
            (None, StrategyKind::Fedprox) => "fedprox",
            (None, StrategyKind::Feddrl) => "feddrl",
        }
    }

    pub fn to_strategy(&self, key: &str) -> Result<Strategy, ConfigError> {
        let forbid = |present: bool, field: &str| {
            if present {
                Err(invalid(format!("{key}.{field}"), format!("not used by {:?}", self.kind)))
            } else {
                Ok(())
            }
        };
        if self.kind != StrategyKind::Fedprox {
            forbid(self.mu.is_some(), "mu")?;
        }
        if self.kind != StrategyKind::Feddrl {
            forbid(self.warm_start.is_some(), "warm_start")?;
            forbid(self.stage1_initial_rounds.is_some(), "stage1_initial_rounds")?;
            forbid(self.stage2_initial_iterations.is_some(), "stage2_initial_iterations")?;
            forbid(self.stage1.is_some(), "stage1")?;
            forbid(self.stage2.is_some(), "stage2")?;
        }
        if let Some(name) = &self.name {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(invalid(format!("{key}.name"), "use letters, digits, '-' or '_'"));
            }
        }
        let strategy = match self.kind {
            StrategyKind::Fedavg => Strategy::FedAvg,
            StrategyKind::Fedprox => Strategy::FedProx {
                mu: self.mu.unwrap_or(DEFAULT_FEDPROX_MU),
            },
            StrategyKind::Feddrl => {
                let d = FedDrlConfig::default();
                Strategy::FedDrl(Box::new(FedDrlConfig {
                    stage1: self.stage1.clone().unwrap_or(d.stage1),
                    stage2: self.stage2.clone().unwrap_or(d.stage2),
                    warm_start: self.warm_start.unwrap_or(d.warm_start),
                    stage1_initial_rounds: self.stage1_initial_rounds,
                    stage2_initial_iterations: self.stage2_initial_iterations,
                }))
            }
        };
        strategy.validate().map_err(|e| invalid(key, e.to_string()))?;
        Ok(strategy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        let l = LocalTrainOpts::default();
        Self {
            rounds: 30,
            local_epochs: l.epochs,
            batch_size: l.batch_size,
            lr: l.lr,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

fn default_strategies() -> Vec<StrategyEntry> {
    vec![
        StrategyEntry::new(StrategyKind::Fedavg),
        StrategyEntry::fedprox(DEFAULT_FEDPROX_MU),
        StrategyEntry::new(StrategyKind::Feddrl),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    pub run: RunSection,
    pub output: OutputSection,
    pub clients: Vec<ClientEntry>,
    pub strategy: Vec<StrategyEntry>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSection::default(),
            partition: PartitionSection::default(),
            run: RunSection::default(),
            output: OutputSection::default(),
            clients: Vec::new(),
            strategy: default_strategies(),
        }
    }
}

/// Parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_str(&text, &path.display().to_string())
}

/// Parses and validates config text; `origin` names the source in errors.
pub fn parse_str(text: &str, origin: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Serialize(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dataset;
        for (key, v) in [
            ("dataset.n_classes", d.n_classes),
            ("dataset.n_per_class", d.n_per_class),
            ("dataset.dim", d.dim),
            ("partition.n_clients", self.partition.n_clients),
            ("run.rounds", self.run.rounds),
            ("run.local_epochs", self.run.local_epochs),
            ("run.batch_size", self.run.batch_size),
        ] {
            if v == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        if d.n_classes < 2 {
            return Err(invalid("dataset.n_classes", "need at least 2 classes"));
        }
        if !(d.spread > 0.0 && d.spread.is_finite()) {
            return Err(invalid("dataset.spread", "must be positive"));
        }
        if !(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0) {
            return Err(invalid("dataset.holdout_fraction", "must be in (0, 1)"));
        }
        if d.task_hidden.contains(&0) {
            return Err(invalid("dataset.task_hidden", "layer widths must be positive"));
        }
        if !(self.partition.alpha > 0.0 && self.partition.alpha.is_finite()) {
            return Err(invalid("partition.alpha", "must be positive"));
        }
        if !(self.run.lr > 0.0 && self.run.lr.is_finite()) {
            return Err(invalid("run.lr", "must be positive"));
        }
        if self.output.formats.is_empty() {
            return Err(invalid("output.formats", "list at least one of \"csv\", \"json\""));
        }
        self.behaviors()?;
        if self.strategy.is_empty() {
            return Err(invalid("strategy", "at least one [[strategy]] entry is required"));
        }
        let mut labels = HashSet::new();
        for (i, s) in self.strategy.iter().enumerate() {
            let key = format!("strategy[{i}]");
            s.to_strategy(&key)?;
            if !labels.insert(s.label().to_string()) {
                return Err(invalid(
                    format!("{key}.name"),
                    format!("label `{}` is used twice; set distinct names", s.label()),
                ));
            }
        }
        Ok(())
    }

    /// `(client id, behavior)` overrides, checked against `n_clients`.
    pub fn behaviors(&self) -> Result<Vec<(usize, Behavior)>, ConfigError> {
        let n = self.partition.n_clients;
        let mut seen = HashSet::new();
        self.clients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let key = format!("clients[{i}]");
                if c.id == 0 || c.id > n {
                    return Err(invalid(
                        format!("{key}.id"),
                        format!("client id {} out of range 1..={n}", c.id),
                    ));
                }
                if !seen.insert(c.id) {
                    return Err(invalid(format!("{key}.id"), format!("client {} listed twice", c.id)));
                }
                Ok((c.id, c.to_behavior(&key)?))
            })
            .collect()
    }

    pub fn world(&self) -> Result<WorldConfig, ConfigError> {
        Ok(WorldConfig {
            n_classes: self.dataset.n_classes,
            n_per_class: self.dataset.n_per_class,
            dim: self.dataset.dim,
            spread: self.dataset.spread,
            holdout_fraction: self.dataset.holdout_fraction,
            n_clients: self.partition.n_clients,
            alpha: self.partition.alpha,
            partition_seed: self.partition.seed,
            task_hidden: self.dataset.task_hidden.clone(),
            behaviors: self.behaviors()?,
        })
    }

    pub fn local(&self) -> LocalTrainOpts {
        LocalTrainOpts {
            epochs: self.run.local_epochs,
            batch_size: self.run.batch_size,
            lr: self.run.lr,
            prox_mu: 0.0,
        }
    }

    /// Index of the entry labelled `label`.
    pub fn find_strategy(&self, label: &str) -> Option<usize> {
        self.strategy.iter().position(|s| s.label() == label)
    }

    /// Entry for `label`, falling back to a default entry when `label` is a
    /// plain strategy kind absent from the file.
    pub fn strategy_entry(&self, label: &str) -> Result<StrategyEntry, ConfigError> {
        if let Some(i) = self.find_strategy(label) {
            return Ok(self.strategy[i].clone());
        }
        match StrategyKind::parse(label) {
            Some(StrategyKind::Fedprox) => Ok(StrategyEntry::fedprox(DEFAULT_FEDPROX_MU)),
            Some(kind) => Ok(StrategyEntry::new(kind)),
            None => {
                let known: Vec<&str> = self.strategy.iter().map(|s| s.label()).collect();
                Err(invalid(
                    "--strategy",
                    format!("unknown strategy `{label}`; configured: {}", known.join(", ")),
                ))
            }
        }
    }

    pub fn experiment(&self, entry: &StrategyEntry) -> Result<ExperimentConfig, ConfigError> {
        Ok(ExperimentConfig {
            world: self.world()?,
            rounds: self.run.rounds,
            local: self.local(),
            seed: self.run.seed,
            strategy: entry.to_strategy("strategy")?,
        })
    }
}
