//! Experiment configuration: a sectioned TOML file with strict keys.
//!
//! Every key has a default, so an empty file is a valid desk-scale
//! experiment. Unknown keys, type mismatches and out-of-range values are
//! rejected with the offending key and, where it can be located, its line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationPlan, Strategy};
use crate::dataspace::{CorruptionKind, CorruptionSpec, Severity};
use crate::error::{Error, Result};
use crate::model::{NormOrder, OptConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub rounds: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { seed: 0, rounds: 30 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Idx,
}

/// Training/test data. Synthetic sets use the class-template generator;
/// IDX sets read MNIST-family file pairs, optionally truncated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub num_classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub side: usize,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            num_classes: 10,
            per_class: 2000,
            test_per_class: 500,
            side: 12,
            sigma: 1.0,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            train_limit: None,
            test_limit: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    #[default]
    Iid,
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    pub num_clients: usize,
    pub noisy_clients: usize,
    pub partition: PartitionKind,
    pub dirichlet_alpha: f64,
    pub participation_rate: f64,
    pub first_round_participation: f64,
}

impl Default for FederationSection {
    fn default() -> Self {
        Self {
            num_clients: 20,
            noisy_clients: 15,
            partition: PartitionKind::Iid,
            dirichlet_alpha: 0.5,
            participation_rate: 1.0,
            first_round_participation: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSection {
    pub noise_level: f64,
    pub severity: Severity,
    pub kinds: Vec<CorruptionKind>,
}

impl Default for CorruptionSection {
    fn default() -> Self {
        Self {
            noise_level: 1.0,
            severity: Severity::High,
            kinds: CorruptionKind::headline(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: vec![128] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub temperature: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        let d = OptConfig::default();
        Self {
            lr: d.lr,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            batch_size: d.batch_size,
            local_epochs: d.local_epochs,
            temperature: d.temperature,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationSection {
    pub strategy: Strategy,
    pub ns_enabled: bool,
    pub alpha: f64,
    pub beta: f64,
    pub trim_ratio: f64,
    pub prox_mu: f64,
}

impl Default for AggregationSection {
    fn default() -> Self {
        Self {
            strategy: Strategy::FedAvg,
            ns_enabled: true,
            alpha: 2.0,
            beta: 0.3,
            trim_ratio: 0.2,
            prox_mu: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    pub norm_order: NormOrder,
    pub norm_batch: usize,
    pub histogram_bins: usize,
}

impl Default for DetectionSection {
    fn default() -> Self {
        Self {
            norm_order: NormOrder::L1,
            norm_batch: 32,
            histogram_bins: 30,
        }
    }
}

/// A complete experiment description.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub federation: FederationSection,
    pub corruption: CorruptionSection,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub aggregation: AggregationSection,
    pub detection: DetectionSection,
}

fn violation(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        line: None,
        message: message.into(),
    }
}

fn require(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(violation(key, message))
    }
}

impl ExperimentConfig {
    /// Checks every range constraint; errors name the dotted key.
    pub fn validate(&self) -> Result<()> {
        require(self.experiment.rounds >= 1, "experiment.rounds", "must be at least 1")?;

        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                require(d.num_classes >= 2, "data.num_classes", "must be at least 2")?;
                require(d.per_class >= 1, "data.per_class", "must be at least 1")?;
                require(d.test_per_class >= 1, "data.test_per_class", "must be at least 1")?;
                require(d.side >= 4, "data.side", "must be at least 4")?;
                require(d.sigma >= 0.0 && d.sigma.is_finite(), "data.sigma", "must be non-negative")?;
            }
            DataSource::Idx => {
                for (key, v) in [
                    ("data.train_images", &d.train_images),
                    ("data.train_labels", &d.train_labels),
                    ("data.test_images", &d.test_images),
                    ("data.test_labels", &d.test_labels),
                ] {
                    require(v.is_some(), key, "required when data.source = \"idx\"")?;
                }
            }
        }

        let f = &self.federation;
        require(f.num_clients >= 1, "federation.num_clients", "must be at least 1")?;
        require(
            f.noisy_clients <= f.num_clients,
            "federation.noisy_clients",
            "must not exceed federation.num_clients",
        )?;
        require(
            f.participation_rate > 0.0 && f.participation_rate <= 1.0,
            "federation.participation_rate",
            "must lie in (0, 1]",
        )?;
        require(
            f.first_round_participation > 0.0 && f.first_round_participation <= 1.0,
            "federation.first_round_participation",
            "must lie in (0, 1]",
        )?;
        require(
            f.dirichlet_alpha > 0.0 && f.dirichlet_alpha.is_finite(),
            "federation.dirichlet_alpha",
            "must be positive",
        )?;

        let c = &self.corruption;
        require(
            (0.0..=1.0).contains(&c.noise_level),
            "corruption.noise_level",
            "must lie in [0, 1]",
        )?;
        require(
            !(c.kinds.is_empty() && c.noise_level > 0.0 && f.noisy_clients > 0),
            "corruption.kinds",
            "must list at least one kind when noisy clients are corrupted",
        )?;

        require(
            !self.model.hidden.contains(&0),
            "model.hidden",
            "layer widths must be positive",
        )?;

        let o = &self.optim;
        require(o.lr > 0.0 && o.lr.is_finite(), "optim.lr", "must be positive")?;
        require((0.0..1.0).contains(&o.momentum), "optim.momentum", "must lie in [0, 1)")?;
        require(o.weight_decay >= 0.0, "optim.weight_decay", "must be non-negative")?;
        require(o.batch_size >= 1, "optim.batch_size", "must be at least 1")?;
        require(o.temperature > 0.0, "optim.temperature", "must be positive")?;

        let a = &self.aggregation;
        require(a.alpha > 0.0 && a.alpha.is_finite(), "aggregation.alpha", "must be positive")?;
        require(a.beta >= 0.0 && a.beta.is_finite(), "aggregation.beta", "must be non-negative")?;
        require(
            (0.0..0.5).contains(&a.trim_ratio),
            "aggregation.trim_ratio",
            "must lie in [0, 0.5)",
        )?;
        require(a.prox_mu >= 0.0, "aggregation.prox_mu", "must be non-negative")?;

        require(self.detection.norm_batch >= 1, "detection.norm_batch", "must be at least 1")?;
        require(self.detection.histogram_bins >= 1, "detection.histogram_bins", "must be at least 1")?;
        Ok(())
    }

    /// Local optimiser settings; the proximal term is active only under
    /// FedProx.
    pub fn opt_config(&self) -> OptConfig {
        let o = &self.optim;
        OptConfig {
            lr: o.lr,
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            batch_size: o.batch_size,
            local_epochs: o.local_epochs,
            prox_mu: if self.aggregation.strategy == Strategy::FedProx {
                self.aggregation.prox_mu
            } else {
                0.0
            },
            temperature: o.temperature,
        }
    }

    /// Aggregation plan with an empty label map.
    pub fn plan_template(&self) -> AggregationPlan {
        let a = &self.aggregation;
        AggregationPlan {
            strategy: a.strategy,
            alpha: a.alpha,
            beta: a.beta,
            trim_ratio: a.trim_ratio,
            labels: Default::default(),
            ns_enabled: a.ns_enabled,
        }
    }

    /// Corruption applied to a noisy client, with its own sub-seed.
    pub fn corruption_spec(&self, seed: u64) -> CorruptionSpec {
        let c = &self.corruption;
        CorruptionSpec::new(c.kinds.iter().copied(), c.severity, c.noise_level, seed)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Interprets relative data paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.data.train_images,
            &mut self.data.train_labels,
            &mut self.data.test_images,
            &mut self.data.test_labels,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// 1-based line of `section.key` (or a top-level `key`) in `source`.
pub(crate) fn locate_key(source: &str, dotted: &str) -> Option<usize> {
    let (section, key) = match dotted.rsplit_once('.') {
        Some((s, k)) => (s, k),
        None => ("", dotted),
    };
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            let lhs = lhs.trim().trim_matches('"');
            let full = if current.is_empty() {
                lhs.to_string()
            } else {
                format!("{current}.{lhs}")
            };
            if full == dotted || (current == section && lhs == key) {
                return Some(i + 1);
            }
        }
    }
    None
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

fn toml_error_key(message: &str) -> String {
    // serde reports unknown keys as "unknown field `name`".
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".to_string())
}

/// Parses and validates a config from TOML text.
pub fn parse_config_str(source: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(source).map_err(|e| {
        let message = e.message().to_string();
        Error::Config {
            key: toml_error_key(&message),
            line: e.span().map(|s| line_of_offset(source, s.start)),
            message,
        }
    })?;
    cfg.validate().map_err(|e| match e {
        Error::Config { key, message, .. } => Error::Config {
            line: locate_key(source, &key),
            key,
            message,
        },
        other => other,
    })?;
    Ok(cfg)
}

/// Reads a config file; relative data paths resolve against its directory.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let source = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config_str(&source)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
