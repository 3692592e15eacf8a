//! Run configuration: one TOML file per experiment, with environment
//! overrides of the form `MMREID__SECTION__KEY=value`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::augment::AugmentConfig;
use crate::benchmark::ProtocolKind;
use crate::losses::TripletConfig;
use crate::model::FusionModelConfig;
use crate::synthetic::SyntheticSpec;
use crate::tensor::OptimConfig;
use crate::training::{BatchSpec, PairingMode, TrainConfig};

pub const ENV_PREFIX: &str = "MMREID__";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Read { path: String, msg: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("environment override {key}: {msg}")]
    Env { key: String, msg: String },
}

/// Evaluation condition: the clean set or one of the corrupted protocols.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Protocol {
    #[default]
    Clean,
    Corrupted(ProtocolKind),
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Clean => f.write_str("clean"),
            Protocol::Corrupted(p) => p.fmt(f),
        }
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("clean") {
            return Ok(Protocol::Clean);
        }
        s.parse().map(Protocol::Corrupted).map_err(|e: crate::benchmark::BenchmarkError| e.to_string())
    }
}

impl Serialize for Protocol {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Protocol {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub root: PathBuf,
    pub pairing: PairingMode,
    /// The last `test_identities` identities in sorted order form the test
    /// split; 0 evaluates on every identity and trains on every identity.
    pub test_identities: usize,
    /// Identity folds over the training split; `val_fold` is held out for
    /// early stopping. Below 2 folds training runs without validation.
    pub folds: usize,
    pub val_fold: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data/synthetic"),
            pairing: PairingMode::Aligned,
            test_identities: 10,
            folds: 5,
            val_fold: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub ml_mda: bool,
    pub batch_p: usize,
    pub batch_k: usize,
    pub triplet_margin: f64,
    pub label_smoothing: f64,
    pub val_every: usize,
    pub augment_validation: bool,
    pub eval_batch: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            ml_mda: t.ml_mda,
            batch_p: t.batch.p,
            batch_k: t.batch.k,
            triplet_margin: t.triplet.margin,
            label_smoothing: t.label_smoothing,
            val_every: t.val_every,
            augment_validation: t.augment_validation,
            eval_batch: t.eval_batch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Label written into summaries; defaults to the model kind.
    pub name: Option<String>,
    pub protocol: Protocol,
    pub dataset: DatasetSection,
    /// `num_identities` is replaced by the size of the training split.
    pub model: FusionModelConfig,
    pub optim: OptimConfig,
    pub augment: AugmentConfig,
    pub train: TrainSection,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            name: None,
            protocol: Protocol::Clean,
            dataset: DatasetSection::default(),
            model: FusionModelConfig::default(),
            optim: OptimConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainSection::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text, applies overrides and checks that a seed is given.
    /// Relative dataset paths are resolved against `base`.
    pub fn from_toml(text: &str, overrides: &[(String, String)], base: &Path) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        if !table.contains_key("seed") {
            return Err(ConfigError::Parse("`seed` is mandatory".into()));
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if cfg.dataset.root.is_relative() {
            cfg.dataset.root = base.join(&cfg.dataset.root);
        }
        Ok(cfg)
    }

    /// Reads `path` with overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, &env_overrides(), base)
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.model.kind.to_string())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optim: self.optim.clone(),
            triplet: TripletConfig { margin: self.train.triplet_margin },
            batch: BatchSpec { p: self.train.batch_p, k: self.train.batch_k },
            augment: AugmentConfig {
                target_hw: self.model.backbone.input_hw,
                ..self.augment.clone()
            },
            ml_mda: self.train.ml_mda,
            pairing: self.dataset.pairing,
            label_smoothing: self.train.label_smoothing,
            val_every: self.train.val_every,
            augment_validation: self.train.augment_validation,
            eval_batch: self.train.eval_batch,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// `MMREID__A__B=value` pairs from the environment, sorted by key.
pub fn env_overrides() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::env::vars()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_string(), v)))
        .collect();
    out.sort();
    out
}

/// Sets the dotted path named by `key` (sections separated by `__`,
/// case-insensitive). The value is read as a TOML literal, or as a plain
/// string when it is not one.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let path: Vec<String> = key.split("__").map(|s| s.to_ascii_lowercase()).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Env { key: key.into(), msg: "empty path segment".into() });
    }
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        let entry = node.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| ConfigError::Env {
            key: key.into(),
            msg: format!("{p} is not a section"),
        })?;
    }
    node.insert(last.clone(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    #[test]
    fn seed_is_mandatory() {
        let err = RunConfig::from_toml("[model]\nkind = \"mmsf\"\n", &[], Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::from_toml("seed = 3\n", &[], Path::new("/base")).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.protocol, Protocol::Clean);
        assert_eq!(cfg.dataset.root, Path::new("/base/data/synthetic"));
        assert_eq!(cfg.augment, AugmentConfig::default());
    }

    #[test]
    fn env_style_overrides_reach_nested_keys() {
        let overrides = [
            ("SEED".to_string(), "11".to_string()),
            ("MODEL__KIND".to_string(), "man".to_string()),
            ("OPTIM__EPOCHS".to_string(), "4".to_string()),
            ("MODEL__BACKBONE__INPUT_HW".to_string(), "[32, 16]".to_string()),
            ("PROTOCOL".to_string(), "ccdx:0.5".to_string()),
        ];
        let cfg = RunConfig::from_toml("seed = 1\n[optim]\nepochs = 9\n", &overrides, Path::new(".")).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.model.kind, ModelKind::Man);
        assert_eq!(cfg.optim.epochs, 4);
        assert_eq!(cfg.model.backbone.input_hw, (32, 16));
        assert_eq!(cfg.protocol, Protocol::Corrupted(ProtocolKind::Ccdx(0.5)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("seed = 1\n[train]\nepochz = 3\n", &[], Path::new(".")).is_err());
    }

    #[test]
    fn serialized_config_reloads() {
        let mut cfg = RunConfig::from_toml("seed = 5\nname = \"x\"\n", &[], Path::new("/r")).unwrap();
        cfg.protocol = Protocol::Corrupted(ProtocolKind::Ucd);
        let again = RunConfig::from_toml(&cfg.to_toml(), &[], Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn train_config_follows_model_input_size() {
        let mut cfg = RunConfig::default();
        cfg.model.backbone.input_hw = (64, 32);
        assert_eq!(cfg.train_config().augment.target_hw, (64, 32));
    }
}
