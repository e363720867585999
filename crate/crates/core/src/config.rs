//! Experiment configuration: strict JSON schema, documented defaults, and
//! collect-all validation with JSON paths.

use crate::dataset::Assignment;
use crate::hash::Digest;
use crate::strategies::Registries;
use crate::UpdateForm;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

pub const DEFAULT_SERVER_LR: f64 = 0.1;
pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.1;
pub const DEFAULT_POS_INITIAL_STAKE: f64 = 1.0;
pub const DEFAULT_POS_REWARD: f64 = 1.0;
pub const DEFAULT_POW_DIFFICULTY_BITS: u32 = 8;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;
pub const DEFAULT_NON_IID_ALPHA: f64 = 0.5;
pub const MAX_POW_DIFFICULTY_BITS: u32 = 32;
/// Class count assumed for IDX datasets when checking attack parameters.
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub rounds: usize,
    pub nodes: usize,
    pub master_seed: u64,
    #[serde(default = "default_update_form")]
    pub update_form: UpdateForm,
    /// Reserved. Only the in-process `broadcast` is implemented.
    #[serde(default = "default_update_sharing")]
    pub update_sharing: String,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub consensus: ConsensusConfig,
    pub validation: ValidationConfig,
    pub aggregation: AggregationConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub attackers: Vec<AttackConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// `blobs` or `mnist`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
    /// Keep only the first `max_samples` rows of an IDX dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_samples: Option<usize>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub partition: PartitionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    /// Defaults to the node count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_partitions: Option<usize>,
    #[serde(default = "default_one")]
    pub iid_fraction: f64,
    #[serde(default = "default_alpha")]
    pub non_iid_alpha: f64,
    #[serde(default = "default_assignment")]
    pub assignment: Assignment,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            num_partitions: None,
            iid_fraction: 1.0,
            non_iid_alpha: DEFAULT_NON_IID_ALPHA,
            assignment: Assignment::OneToOne,
            holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitteeSelection {
    Uniform,
    StakeWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    /// `pow`, `pos`, `committee`, or any registered name.
    pub kind: String,
    #[serde(default = "default_difficulty")]
    pub pow_difficulty_bits: u32,
    /// Per-node hash rate; unlisted nodes get 1.0.
    #[serde(default)]
    pub pow_hashpower: BTreeMap<u32, f64>,
    #[serde(default = "default_initial_stake")]
    pub pos_initial_stake: f64,
    #[serde(default = "default_reward")]
    pub pos_reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub committee_size: Option<usize>,
    #[serde(default = "default_selection")]
    pub committee_selection: CommitteeSelection,
}

impl ConsensusConfig {
    pub fn new(kind: &str) -> Self {
        ConsensusConfig {
            kind: kind.to_string(),
            pow_difficulty_bits: DEFAULT_POW_DIFFICULTY_BITS,
            pow_hashpower: BTreeMap::new(),
            pos_initial_stake: DEFAULT_POS_INITIAL_STAKE,
            pos_reward: DEFAULT_POS_REWARD,
            committee_size: None,
            committee_selection: CommitteeSelection::Uniform,
        }
    }

    pub fn hashpower(&self, node: u32) -> f64 {
        self.pow_hashpower.get(&node).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    /// `pass_weights`, `pass_gradients`, `global_dataset`, `local_dataset`,
    /// `multi_krum`, or any registered name.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_threshold: Option<f64>,
    /// Multi-Krum `f`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumed_byzantine: Option<usize>,
    /// Multi-Krum `m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accept_count: Option<usize>,
}

impl ValidationConfig {
    pub fn new(kind: &str) -> Self {
        ValidationConfig {
            kind: kind.to_string(),
            accuracy_threshold: None,
            assumed_byzantine: None,
            accept_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    /// `fedavg`, `mean`, `median`, or any registered name.
    pub kind: String,
    #[serde(default = "default_server_lr")]
    pub server_lr: f64,
}

impl AggregationConfig {
    pub fn new(kind: &str) -> Self {
        AggregationConfig {
            kind: kind.to_string(),
            server_lr: DEFAULT_SERVER_LR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

/// One malicious node and its behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub node_id: u32,
    /// `label_flip`, `targeted_poison`, `additive_noise`, or any registered
    /// name.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_map: Option<BTreeMap<usize, usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poison_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Replaces the master seed when deriving this attacker's random streams.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl AttackConfig {
    pub fn new(node_id: u32, kind: &str) -> Self {
        AttackConfig {
            node_id,
            kind: kind.to_string(),
            flip_map: None,
            source_class: None,
            target_class: None,
            poison_fraction: None,
            sigma: None,
            seed: None,
        }
    }
}

fn default_update_form() -> UpdateForm {
    UpdateForm::Weights
}
fn default_update_sharing() -> String {
    "broadcast".into()
}
fn default_test_fraction() -> f64 {
    DEFAULT_TEST_FRACTION
}
fn default_validation_fraction() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}
fn default_one() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    DEFAULT_NON_IID_ALPHA
}
fn default_assignment() -> Assignment {
    Assignment::OneToOne
}
fn default_holdout() -> f64 {
    DEFAULT_HOLDOUT_FRACTION
}
fn default_difficulty() -> u32 {
    DEFAULT_POW_DIFFICULTY_BITS
}
fn default_initial_stake() -> f64 {
    DEFAULT_POS_INITIAL_STAKE
}
fn default_reward() -> f64 {
    DEFAULT_POS_REWARD
}
fn default_selection() -> CommitteeSelection {
    CommitteeSelection::Uniform
}
fn default_server_lr() -> f64 {
    DEFAULT_SERVER_LR
}

/// One violated rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub rule: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{}", format_issues(.0))]
    Invalid(Vec<ConfigIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[ConfigIssue] {
        match self {
            ConfigError::Invalid(v) => v,
            ConfigError::Io { .. } => &[],
        }
    }
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    let lines: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
    format!("invalid configuration:\n  {}", lines.join("\n  "))
}

struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, rule: impl Into<String>) {
        self.0.push(ConfigIssue {
            path: path.into(),
            rule: rule.into(),
        });
    }

    fn check(&mut self, ok: bool, path: &str, rule: &str) {
        if !ok {
            self.push(path, rule);
        }
    }
}

fn serde_path(path: &str) -> String {
    if path.is_empty() || path == "." {
        "$".into()
    } else if path.starts_with('[') {
        format!("${path}")
    } else {
        format!("$.{path}")
    }
}

/// Reads and validates a config file with the built-in strategies.
pub fn load_config(path: &Path) -> Result<SimulationConfig, ConfigError> {
    load_config_with(path, &Registries::default())
}

pub fn load_config_with(
    path: &Path,
    registries: &Registries,
) -> Result<SimulationConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, registries)
}

/// Parses JSON text, rejecting unknown keys, then resolves defaults and
/// checks every rule. All violations are reported together.
pub fn parse_config(text: &str, registries: &Registries) -> Result<SimulationConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
        ConfigError::Invalid(vec![ConfigIssue {
            path: "$".into(),
            rule: format!("malformed JSON: {e}"),
        }])
    })?;
    from_value(value, registries)
}

pub fn from_value(
    value: serde_json::Value,
    registries: &Registries,
) -> Result<SimulationConfig, ConfigError> {
    let mut issues = Issues(Vec::new());
    let mut unknown = Vec::new();
    let mut track = serde_path_to_error::Track::new();
    let parsed: Result<SimulationConfig, _> = {
        let de = serde_path_to_error::Deserializer::new(value, &mut track);
        serde_ignored::deserialize(de, |p| unknown.push(p.to_string()))
    };
    for p in unknown {
        issues.push(serde_path(&p), "unknown key");
    }
    let mut cfg = match parsed {
        Ok(cfg) => cfg,
        Err(e) => {
            issues.push(serde_path(&track.path().to_string()), e.to_string());
            return Err(ConfigError::Invalid(issues.0));
        }
    };
    if !issues.0.is_empty() {
        return Err(ConfigError::Invalid(issues.0));
    }
    cfg.resolve_defaults();
    cfg.check(registries, &mut issues);
    if issues.0.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(issues.0))
    }
}

impl SimulationConfig {
    fn resolve_defaults(&mut self) {
        if self.dataset.partition.num_partitions.is_none() {
            self.dataset.partition.num_partitions = Some(self.nodes);
        }
    }

    pub fn num_partitions(&self) -> usize {
        self.dataset.partition.num_partitions.unwrap_or(self.nodes)
    }

    /// Classes the dataset will have, when known before loading data.
    pub fn expected_classes(&self) -> Option<usize> {
        match self.dataset.kind.as_str() {
            "blobs" => self.dataset.num_classes,
            "mnist" => Some(self.dataset.num_classes.unwrap_or(MNIST_CLASSES)),
            _ => None,
        }
    }

    /// Nodes that train each round under the configured consensus.
    pub fn trainers_per_round(&self) -> usize {
        if self.consensus.kind == "committee" {
            self.nodes
                .saturating_sub(self.consensus.committee_size.unwrap_or(0))
        } else {
            self.nodes
        }
    }

    /// Re-runs every semantic rule.
    pub fn validate(&self, registries: &Registries) -> Result<(), ConfigError> {
        let mut issues = Issues(Vec::new());
        self.check(registries, &mut issues);
        if issues.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues.0))
        }
    }

    fn check(&self, reg: &Registries, is: &mut Issues) {
        is.check(self.rounds >= 1, "$.rounds", "must be at least 1");
        is.check(self.nodes >= 1, "$.nodes", "must be at least 1");
        is.check(
            self.update_sharing == "broadcast",
            "$.update_sharing",
            "only `broadcast` is supported",
        );
        for (i, &h) in self.model.hidden_dims.iter().enumerate() {
            is.check(
                h >= 1,
                &format!("$.model.hidden_dims[{i}]"),
                "must be at least 1",
            );
        }
        self.check_dataset(is);
        self.check_consensus(reg, is);
        self.check_validation(reg, is);
        self.check_aggregation(reg, is);

        let t = &self.train;
        is.check(
            t.local_epochs >= 1,
            "$.train.local_epochs",
            "must be at least 1",
        );
        is.check(
            t.batch_size >= 1,
            "$.train.batch_size",
            "must be at least 1",
        );
        is.check(
            t.learning_rate > 0.0 && t.learning_rate.is_finite(),
            "$.train.learning_rate",
            "must be positive and finite",
        );
        self.check_attackers(reg, is);
    }

    fn check_dataset(&self, is: &mut Issues) {
        let d = &self.dataset;
        match d.kind.as_str() {
            "blobs" => {
                is.check(
                    d.num_classes.is_some_and(|c| c >= 1),
                    "$.dataset.num_classes",
                    "blobs require num_classes >= 1",
                );
                is.check(
                    d.per_class.is_some_and(|c| c >= 1),
                    "$.dataset.per_class",
                    "blobs require per_class >= 1",
                );
                is.check(
                    d.dim.is_some_and(|c| c >= 1),
                    "$.dataset.dim",
                    "blobs require dim >= 1",
                );
                is.check(
                    d.spread.is_some_and(|s| s > 0.0 && s.is_finite()),
                    "$.dataset.spread",
                    "blobs require a positive spread",
                );
            }
            "mnist" => {
                is.check(
                    d.images_path.is_some(),
                    "$.dataset.images_path",
                    "mnist requires images_path",
                );
                is.check(
                    d.labels_path.is_some(),
                    "$.dataset.labels_path",
                    "mnist requires labels_path",
                );
                if let Some(m) = d.max_samples {
                    is.check(m >= 1, "$.dataset.max_samples", "must be at least 1");
                }
            }
            other => is.push(
                "$.dataset.kind",
                format!("unknown dataset kind `{other}` (known: blobs, mnist)"),
            ),
        }
        is.check(
            (0.0..1.0).contains(&d.test_fraction),
            "$.dataset.test_fraction",
            "must lie in [0, 1)",
        );
        is.check(
            (0.0..1.0).contains(&d.validation_fraction),
            "$.dataset.validation_fraction",
            "must lie in [0, 1)",
        );
        is.check(
            d.test_fraction + d.validation_fraction < 1.0,
            "$.dataset",
            "test_fraction + validation_fraction must be below 1",
        );
        is.check(
            d.test_fraction > 0.0,
            "$.dataset.test_fraction",
            "a test split is required for metrics",
        );
        let p = &d.partition;
        let np = self.num_partitions();
        is.check(
            np >= 1,
            "$.dataset.partition.num_partitions",
            "must be at least 1",
        );
        if p.assignment == Assignment::OneToOne {
            is.check(
                np == self.nodes,
                "$.dataset.partition.num_partitions",
                "one_to_one assignment requires num_partitions = nodes",
            );
        }
        is.check(
            (0.0..=1.0).contains(&p.iid_fraction),
            "$.dataset.partition.iid_fraction",
            "must lie in [0, 1]",
        );
        is.check(
            p.non_iid_alpha > 0.0 && p.non_iid_alpha.is_finite(),
            "$.dataset.partition.non_iid_alpha",
            "must be positive",
        );
        is.check(
            (0.0..1.0).contains(&p.holdout_fraction),
            "$.dataset.partition.holdout_fraction",
            "must lie in [0, 1)",
        );
    }

    fn check_consensus(&self, reg: &Registries, is: &mut Issues) {
        let c = &self.consensus;
        if !reg.consensus.contains(&c.kind) {
            is.push(
                "$.consensus.kind",
                format!(
                    "unknown consensus `{}` (known: {})",
                    c.kind,
                    reg.consensus.names().collect::<Vec<_>>().join(", ")
                ),
            );
        }
        is.check(
            c.pow_difficulty_bits <= MAX_POW_DIFFICULTY_BITS,
            "$.consensus.pow_difficulty_bits",
            "must be at most 32",
        );
        for (node, &hp) in &c.pow_hashpower {
            let path = format!("$.consensus.pow_hashpower.{node}");
            is.check((*node as usize) < self.nodes, &path, "node id out of range");
            is.check(
                hp > 0.0 && hp.is_finite(),
                &path,
                "hashpower must be positive",
            );
        }
        is.check(
            c.pos_initial_stake > 0.0 && c.pos_initial_stake.is_finite(),
            "$.consensus.pos_initial_stake",
            "must be positive",
        );
        is.check(
            c.pos_reward >= 0.0 && c.pos_reward.is_finite(),
            "$.consensus.pos_reward",
            "must be non-negative",
        );
        if c.kind == "committee" {
            match c.committee_size {
                None => is.push(
                    "$.consensus.committee_size",
                    "committee consensus requires committee_size",
                ),
                Some(0) => is.push("$.consensus.committee_size", "must be at least 1"),
                Some(k) if k >= self.nodes => is.push(
                    "$.consensus.committee_size",
                    format!(
                        "committee of {k} out of {} nodes leaves no trainers",
                        self.nodes
                    ),
                ),
                _ => {}
            }
        }
    }

    fn check_validation(&self, reg: &Registries, is: &mut Issues) {
        let v = &self.validation;
        if !reg.validation.contains(&v.kind) {
            is.push(
                "$.validation.kind",
                format!(
                    "unknown validation `{}` (known: {})",
                    v.kind,
                    reg.validation.names().collect::<Vec<_>>().join(", ")
                ),
            );
        }
        match v.kind.as_str() {
            "pass_weights" => is.check(
                self.update_form == UpdateForm::Weights,
                "$.validation.kind",
                "pass_weights accepts only weight-form updates but update_form is gradients",
            ),
            "pass_gradients" => is.check(
                self.update_form == UpdateForm::Gradients,
                "$.validation.kind",
                "pass_gradients accepts only gradient-form updates but update_form is weights",
            ),
            "global_dataset" | "local_dataset" => match v.accuracy_threshold {
                None => is.push(
                    "$.validation.accuracy_threshold",
                    "required for dataset validation",
                ),
                Some(t) => is.check(
                    (0.0..=1.0).contains(&t),
                    "$.validation.accuracy_threshold",
                    "must lie in [0, 1]",
                ),
            },
            "multi_krum" => {
                let trainers = self.trainers_per_round();
                match v.assumed_byzantine {
                    None => is.push("$.validation.assumed_byzantine", "required for multi_krum"),
                    Some(f) => is.check(
                        trainers >= f + 3,
                        "$.validation.assumed_byzantine",
                        &format!("multi_krum needs at least f + 3 = {} updates per round, only {trainers} nodes train", f + 3),
                    ),
                }
                match v.accept_count {
                    None => is.push("$.validation.accept_count", "required for multi_krum"),
                    Some(0) => is.push("$.validation.accept_count", "must be at least 1"),
                    Some(m) => is.check(
                        trainers >= m,
                        "$.validation.accept_count",
                        &format!("cannot accept {m} of {trainers} updates per round"),
                    ),
                }
            }
            _ => {}
        }
    }

    fn check_aggregation(&self, reg: &Registries, is: &mut Issues) {
        let a = &self.aggregation;
        match reg.aggregation.build(&a.kind, a) {
            Err(e) => is.push("$.aggregation.kind", e.to_string()),
            Ok(agg) => {
                if agg.weights_only() && self.update_form != UpdateForm::Weights {
                    is.push(
                        "$.aggregation.kind",
                        format!(
                            "{} is defined only for weight-form updates (update_form is gradients)",
                            a.kind
                        ),
                    );
                }
            }
        }
        is.check(
            a.server_lr > 0.0 && a.server_lr.is_finite(),
            "$.aggregation.server_lr",
            "must be positive",
        );
    }

    fn check_attackers(&self, reg: &Registries, is: &mut Issues) {
        let mut seen = BTreeSet::new();
        let classes = self.expected_classes();
        for (i, a) in self.attackers.iter().enumerate() {
            let path = format!("$.attackers[{i}]");
            if a.node_id as usize >= self.nodes {
                is.push(
                    format!("{path}.node_id"),
                    format!("node {} does not exist", a.node_id),
                );
            }
            if !seen.insert(a.node_id) {
                is.push(
                    format!("{path}.node_id"),
                    format!("node {} listed twice", a.node_id),
                );
            }
            let setup = crate::attacks::AttackSetup {
                config: a.clone(),
                num_classes: classes.unwrap_or(usize::MAX),
            };
            if let Err(e) = reg.attack.build(&a.kind, &setup) {
                is.push(format!("{path}.kind"), e.to_string());
            }
        }
    }

    /// SHA-256 of the compact JSON of the resolved config, ignoring
    /// `output_dir`.
    pub fn digest(&self) -> Digest {
        let mut c = self.clone();
        c.output_dir = None;
        Digest::of(&serde_json::to_vec(&c).expect("config serializes"))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn minimal() -> serde_json::Value {
        json!({
            "rounds": 3,
            "nodes": 6,
            "master_seed": 1,
            "model": {"hidden_dims": [8]},
            "dataset": {"kind": "blobs", "num_classes": 3, "per_class": 50, "dim": 2, "spread": 0.5},
            "consensus": {"kind": "committee", "committee_size": 2},
            "validation": {"kind": "pass_weights"},
            "aggregation": {"kind": "mean"},
            "train": {"local_epochs": 1, "batch_size": 16, "learning_rate": 0.1}
        })
    }

    fn parse(v: serde_json::Value) -> Result<SimulationConfig, ConfigError> {
        from_value(v, &Registries::default())
    }

    fn paths(e: &ConfigError) -> Vec<String> {
        e.issues().iter().map(|i| i.path.clone()).collect()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse(minimal()).unwrap();
        assert_eq!(cfg.aggregation.server_lr, 0.1);
        assert_eq!(cfg.dataset.partition.holdout_fraction, 0.1);
        assert_eq!(cfg.consensus.pos_initial_stake, 1.0);
        assert_eq!(cfg.update_form, UpdateForm::Weights);
        assert_eq!(cfg.dataset.partition.num_partitions, Some(6));
        assert!(cfg.attackers.is_empty());
    }

    #[test]
    fn fedavg_with_gradients_is_rejected_at_aggregation_kind() {
        let mut v = minimal();
        v["aggregation"]["kind"] = json!("fedavg");
        v["update_form"] = json!("gradients");
        v["validation"]["kind"] = json!("pass_gradients");
        let err = parse(v).unwrap_err();
        assert_eq!(paths(&err), vec!["$.aggregation.kind"]);
        assert!(err.to_string().contains("weight-form"), "{err}");
    }

    #[test]
    fn committee_of_everyone_is_rejected() {
        let mut v = minimal();
        v["consensus"]["committee_size"] = json!(6);
        let err = parse(v).unwrap_err();
        assert_eq!(paths(&err), vec!["$.consensus.committee_size"]);
    }

    #[test]
    fn unknown_keys_are_all_reported() {
        let mut v = minimal();
        v["bogus"] = json!(1);
        v["consensus"]["difficulty"] = json!(3);
        let err = parse(v).unwrap_err();
        let mut p = paths(&err);
        p.sort();
        assert_eq!(p, vec!["$.bogus", "$.consensus.difficulty"]);
    }

    #[test]
    fn semantic_errors_are_collected() {
        let mut v = minimal();
        v["rounds"] = json!(0);
        v["train"]["learning_rate"] = json!(-1.0);
        v["attackers"] = json!([{"node_id": 9, "kind": "additive_noise", "sigma": 1.0}]);
        v["validation"] = json!({"kind": "multi_krum", "assumed_byzantine": 2, "accept_count": 1});
        let err = parse(v).unwrap_err();
        let p = paths(&err);
        assert!(p.contains(&"$.rounds".to_string()));
        assert!(p.contains(&"$.train.learning_rate".to_string()));
        assert!(p.contains(&"$.attackers[0].node_id".to_string()));
        assert!(
            p.contains(&"$.validation.assumed_byzantine".to_string()),
            "{p:?}"
        );
    }

    #[test]
    fn type_errors_carry_a_path() {
        let mut v = minimal();
        v["train"]["batch_size"] = json!("many");
        let err = parse(v).unwrap_err();
        assert_eq!(paths(&err), vec!["$.train.batch_size"]);
    }

    #[test]
    fn resolved_config_round_trips_to_the_same_digest() {
        let mut v = minimal();
        v["output_dir"] = json!("somewhere");
        let cfg = parse(v).unwrap();
        let text = cfg.to_json_pretty();
        let again = parse_config(&text, &Registries::default()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.digest(), cfg.digest());
        let mut other = cfg.clone();
        other.master_seed += 1;
        assert_ne!(other.digest(), cfg.digest());
        other = cfg.clone();
        other.output_dir = None;
        assert_eq!(other.digest(), cfg.digest());
    }

    #[test]
    fn attack_parameters_are_checked_against_classes() {
        let mut v = minimal();
        v["attackers"] = json!([{"node_id": 0, "kind": "label_flip", "flip_map": {"0": 3}}]);
        let err = parse(v).unwrap_err();
        assert_eq!(paths(&err), vec!["$.attackers[0].kind"]);
    }
}
