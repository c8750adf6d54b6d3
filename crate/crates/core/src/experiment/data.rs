use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::DatasetConfig;
use crate::data::{
    compute_normalization, load_cifar_binary, synthetic_split, Dataset, NormalizationStats, Split,
    SyntheticSpec,
};
use crate::error::{Error, Result};

/// Environment variable naming the directory with the CIFAR binary files.
pub const DATA_DIR_ENV: &str = "REFLECTNET_DATA_DIR";

/// Standardized train/test split plus what is needed to describe it in a manifest.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub split: Split,
    pub stats: NormalizationStats,
    pub info: DataInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataInfo {
    pub description: String,
    pub n_train: usize,
    pub n_test: usize,
    pub image_shape: [usize; 3],
    /// SHA-256 of the raw pixels, labels and ids of both splits.
    pub checksum: String,
    pub normalization: NormalizationStats,
}

impl PreparedData {
    pub fn image_hw(&self) -> (usize, usize) {
        let [_, h, w] = self.split.train.image_shape;
        (h, w)
    }
}

/// Loads or generates the raw split and standardizes both halves with train statistics.
pub fn prepare_data(cfg: &DatasetConfig, data_dir: Option<&Path>) -> Result<PreparedData> {
    let (raw, description) = match cfg {
        DatasetConfig::Synthetic {
            n_classes,
            size,
            n_train,
            n_test,
            noise,
            clutter,
            seed,
        } => {
            let spec = SyntheticSpec {
                noise: *noise,
                clutter: *clutter,
                ..SyntheticSpec::new(*n_classes, *size, *seed)
            };
            let split = synthetic_split(&spec, *n_train, *n_test)?;
            (
                split,
                format!("synthetic shapes, {n_classes} classes, {size}x{size}, seed {seed}"),
            )
        }
        DatasetConfig::Cifar10 { n_train, n_test }
        | DatasetConfig::Cifar100 { n_train, n_test } => {
            let variant = cfg.cifar_variant().expect("cifar arm");
            let dir = data_dir.ok_or_else(|| {
                Error::Config(format!(
                    "{variant:?} needs a data directory (set {DATA_DIR_ENV})"
                ))
            })?;
            let full = load_cifar_binary(dir, variant)?;
            let take = |d: Dataset, n: &Option<usize>| match n {
                Some(n) => d.head(*n),
                None => d,
            };
            let split = Split {
                train: take(full.train, n_train),
                test: take(full.test, n_test),
            };
            (split, format!("{variant:?} from {}", dir.display()))
        }
    };
    let stats = compute_normalization(&raw.train)?;
    let info = DataInfo {
        description,
        n_train: raw.train.len(),
        n_test: raw.test.len(),
        image_shape: raw.train.image_shape,
        checksum: checksum(&raw),
        normalization: stats.clone(),
    };
    let split = Split {
        train: stats.apply(&raw.train)?,
        test: stats.apply(&raw.test)?,
    };
    Ok(PreparedData { split, stats, info })
}

fn checksum(split: &Split) -> String {
    let mut h = Sha256::new();
    for d in [&split.train, &split.test] {
        for v in d.pixels() {
            h.update(v.to_le_bytes());
        }
        for (&l, &id) in d.labels().iter().zip(d.ids()) {
            h.update((l as u64).to_le_bytes());
            h.update(id.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_data_is_standardized_with_train_statistics() {
        let cfg = DatasetConfig::Synthetic {
            n_classes: 4,
            size: 8,
            n_train: 40,
            n_test: 20,
            noise: 0.1,
            clutter: 2,
            seed: 3,
        };
        let a = prepare_data(&cfg, None).unwrap();
        let b = prepare_data(&cfg, None).unwrap();
        assert_eq!(a.info, b.info);
        let again = compute_normalization(&a.split.train).unwrap();
        for m in again.mean {
            assert!(m.abs() < 1e-6, "{m}");
        }
        assert!(prepare_data(&DatasetConfig::cifar10_desk(), None).is_err());
    }
}
