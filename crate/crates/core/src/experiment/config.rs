use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{default_layer, AttachSpec, Family, ModelConfig};
use crate::data::{CifarVariant, SyntheticSpec};
use crate::error::{Error, Result};
use crate::training::{ExpSource, ExplainedClass, TestMode, TrainConfig};

/// Which data an experiment runs on. CIFAR sizes of `None` mean the full split; a number
/// keeps the first records of that split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic {
        n_classes: usize,
        size: usize,
        n_train: usize,
        n_test: usize,
        noise: f32,
        /// Distractor patterns per image.
        #[serde(default)]
        clutter: usize,
        seed: u64,
    },
    Cifar10 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_train: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_test: Option<usize>,
    },
    Cifar100 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_train: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_test: Option<usize>,
    },
}

/// Per-pixel noise of the synthetic desk set.
pub const SYNTHETIC_DESK_NOISE: f32 = 0.8;
/// Distractor patterns per image of the synthetic desk set.
pub const SYNTHETIC_DESK_CLUTTER: usize = 8;

impl DatasetConfig {
    /// CIFAR-10 subset used for desk-scale runs.
    pub fn cifar10_desk() -> Self {
        DatasetConfig::Cifar10 {
            n_train: Some(5000),
            n_test: Some(1000),
        }
    }

    /// Ten-class synthetic shapes at 32x32 with 5000/1000 samples. Clutter and noise keep a
    /// width-0.25 VGG baseline near 65% test accuracy, the range of the CIFAR-10 subset.
    pub fn synthetic_desk() -> Self {
        let spec = SyntheticSpec::new(10, 32, 0);
        DatasetConfig::Synthetic {
            n_classes: spec.n_classes,
            size: spec.size,
            n_train: 5000,
            n_test: 1000,
            noise: SYNTHETIC_DESK_NOISE,
            clutter: SYNTHETIC_DESK_CLUTTER,
            seed: spec.seed,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            DatasetConfig::Synthetic { n_classes, .. } => *n_classes,
            DatasetConfig::Cifar10 { .. } => 10,
            DatasetConfig::Cifar100 { .. } => 100,
        }
    }

    pub fn cifar_variant(&self) -> Option<CifarVariant> {
        match self {
            DatasetConfig::Synthetic { .. } => None,
            DatasetConfig::Cifar10 { .. } => Some(CifarVariant::Cifar10),
            DatasetConfig::Cifar100 { .. } => Some(CifarVariant::Cifar100),
        }
    }
}

/// One experiment: a base classifier and a reflective network trained per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: Family,
    pub width_multiplier: f64,
    /// Explanation depth `d`, shared by every attach point.
    pub depth: usize,
    /// Explained layers `L`.
    pub layers: Vec<usize>,
    pub train_set: Vec<ExplainedClass>,
    pub test_modes: Vec<TestMode>,
    pub source: ExpSource,
    pub n_seeds: usize,
    pub dataset: DatasetConfig,
    /// Shared by base and reflective training; `train.seed` is the first run seed.
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk(Family::Vgg, DatasetConfig::cifar10_desk())
    }
}

impl ExperimentConfig {
    /// Default setup at desk scale: d = 16, {Cor, Ran}, Self, width 0.25, 30 epochs.
    pub fn desk(family: Family, dataset: DatasetConfig) -> Self {
        Self {
            family,
            width_multiplier: 0.25,
            depth: 16,
            layers: vec![default_layer(family)],
            train_set: vec![ExplainedClass::Cor, ExplainedClass::Ran],
            test_modes: vec![TestMode::Pred, TestMode::Cor, TestMode::Ran],
            source: ExpSource::SelfNet,
            n_seeds: 5,
            dataset,
            train: TrainConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train.validate()?;
        if self.layers.is_empty() {
            return Err(Error::Config("layers must name at least one layer".into()));
        }
        if self.train_set.is_empty() {
            return Err(Error::Config("train_set must not be empty".into()));
        }
        if self.test_modes.is_empty() {
            return Err(Error::Config("test_modes must not be empty".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be positive".into()));
        }
        let n = self.dataset.n_classes();
        for c in &self.train_set {
            if let ExplainedClass::Kth(k) = c {
                if *k > n {
                    return Err(Error::Config(format!("{c} exceeds the {n} classes")));
                }
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.family, self.dataset.n_classes(), self.width_multiplier)
    }

    pub fn attach(&self) -> Vec<AttachSpec> {
        self.layers
            .iter()
            .map(|&l| AttachSpec::new(l, self.depth))
            .collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64)
            .map(|s| self.train.seed + s)
            .collect()
    }

    /// SHA-256 of the canonical JSON form, hex encoded; changes with any field.
    pub fn hash(&self) -> String {
        digest_json(self)
    }

    /// Identifies the base classifiers this experiment trains or reuses: everything but
    /// the reflective settings.
    pub fn base_hash(&self) -> String {
        #[derive(Serialize)]
        struct BaseKey<'a> {
            family: Family,
            width_multiplier: f64,
            dataset: &'a DatasetConfig,
            train: TrainConfig,
        }
        digest_json(&BaseKey {
            family: self.family,
            width_multiplier: self.width_multiplier,
            dataset: &self.dataset,
            train: self.train.clone().with_seed(0),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

pub(crate) fn digest_json<S: Serialize>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("configs serialize to JSON");
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}
