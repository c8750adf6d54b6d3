//! CIFAR-10/100 binary layout: each record is the label byte(s) followed by 3072 pixel
//! bytes (1024 red, 1024 green, 1024 blue, each row-major 32x32).
//!
//! CIFAR-10 stores one label byte per record in `data_batch_1.bin` .. `data_batch_5.bin`
//! and `test_batch.bin`; CIFAR-100 stores a coarse and a fine label byte in `train.bin`
//! and `test.bin`. The fine label is used.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
const PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
/// Test-split ids start here so that train and test ids never collide.
pub const TEST_ID_BASE: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CifarVariant {
    #[serde(rename = "cifar10")]
    Cifar10,
    #[serde(rename = "cifar100")]
    Cifar100,
}

impl CifarVariant {
    pub fn n_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    pub fn train_files(self) -> Vec<&'static str> {
        match self {
            CifarVariant::Cifar10 => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            CifarVariant::Cifar100 => vec!["train.bin"],
        }
    }

    pub fn test_file(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "test_batch.bin",
            CifarVariant::Cifar100 => "test.bin",
        }
    }

    fn subdir(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "cifar-10-batches-bin",
            CifarVariant::Cifar100 => "cifar-100-binary",
        }
    }
}

/// Parses concatenated records. Ids are `first_id`, `first_id + 1`, ... in record order.
pub fn parse_cifar_records(bytes: &[u8], variant: CifarVariant, first_id: u64) -> Result<Dataset> {
    let rec = variant.record_len();
    if !bytes.len().is_multiple_of(rec) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {rec}-byte records (truncated file?)",
            bytes.len()
        )));
    }
    let n = bytes.len() / rec;
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let label = r[variant.label_bytes() - 1] as usize;
        if label >= variant.n_classes() || (variant == CifarVariant::Cifar100 && r[0] >= 20) {
            return Err(Error::Format(format!(
                "record {i}: label byte {label} out of range"
            )));
        }
        labels.push(label);
        pixels.extend(r[variant.label_bytes()..].iter().map(|&b| b as f32 / 255.0));
    }
    let ids = (0..n as u64).map(|i| first_id + i).collect();
    Dataset::new(
        variant.n_classes(),
        [3, CIFAR_SIDE, CIFAR_SIDE],
        pixels,
        labels,
        ids,
    )
}

/// Serializes `data` in the binary layout. Pixels are quantized to `round(255 x)`; the
/// CIFAR-100 coarse label byte is written as 0.
pub fn write_cifar_records(data: &Dataset, variant: CifarVariant) -> Result<Vec<u8>> {
    if data.image_shape != [3, CIFAR_SIDE, CIFAR_SIDE] {
        return Err(Error::Shape(format!(
            "the binary layout needs 3x32x32 images, got {:?}",
            data.image_shape
        )));
    }
    if data.n_classes > variant.n_classes() {
        return Err(Error::InvalidArgument(format!(
            "{} classes do not fit {variant:?}",
            data.n_classes
        )));
    }
    let mut out = Vec::with_capacity(data.len() * variant.record_len());
    for i in 0..data.len() {
        if variant == CifarVariant::Cifar100 {
            out.push(0);
        }
        out.push(data.labels()[i] as u8);
        out.extend(
            data.image(i)
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

fn resolve_dir(dir: &Path, variant: CifarVariant) -> PathBuf {
    let nested = dir.join(variant.subdir());
    if !dir.join(variant.test_file()).exists() && nested.join(variant.test_file()).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Loads the standard train/test split from `dir` (or its conventional subdirectory).
/// Train ids follow file order from 0; test ids start at [`TEST_ID_BASE`].
pub fn load_cifar_binary(dir: impl AsRef<Path>, variant: CifarVariant) -> Result<Split> {
    let dir = resolve_dir(dir.as_ref(), variant);
    let mut bytes = Vec::new();
    for f in variant.train_files() {
        let b = read(&dir.join(f))?;
        if b.len() % variant.record_len() != 0 {
            return Err(Error::Format(format!("{f} is truncated")));
        }
        bytes.extend_from_slice(&b);
    }
    let train = parse_cifar_records(&bytes, variant, 0)?;
    let test = parse_cifar_records(
        &read(&dir.join(variant.test_file()))?,
        variant,
        TEST_ID_BASE,
    )?;
    Ok(Split { train, test })
}

/// Writes `split` as the standard set of files in `dir`. CIFAR-10 training records are
/// spread over the five batch files in order.
pub fn export_cifar_layout(
    split: &Split,
    dir: impl AsRef<Path>,
    variant: CifarVariant,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let train = write_cifar_records(&split.train, variant)?;
    let files = variant.train_files();
    let rec = variant.record_len();
    let n = split.train.len();
    let mut start = 0;
    for (i, f) in files.iter().enumerate() {
        let end = n * (i + 1) / files.len();
        std::fs::write(dir.join(f), &train[start * rec..end * rec])?;
        start = end;
    }
    std::fs::write(
        dir.join(variant.test_file()),
        write_cifar_records(&split.test, variant)?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, PIXELS));
        r
    }

    #[test]
    fn label_and_pixel_scaling() {
        let mut bytes = record(7, 255);
        bytes.extend(record(0, 0));
        let d = parse_cifar_records(&bytes, CifarVariant::Cifar10, 5).unwrap();
        assert_eq!(d.labels(), &[7, 0]);
        assert_eq!(d.ids(), &[5, 6]);
        assert!(d.image(0).iter().all(|&v| v == 1.0));
        assert!(d.image(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncated_and_out_of_range_records_fail() {
        let bytes = record(3, 1);
        assert!(parse_cifar_records(&bytes[..bytes.len() - 1], CifarVariant::Cifar10, 0).is_err());
        assert!(parse_cifar_records(&record(10, 1), CifarVariant::Cifar10, 0).is_err());
    }

    #[test]
    fn cifar100_uses_the_fine_label() {
        let mut r = vec![4u8, 87];
        r.extend(std::iter::repeat_n(9u8, PIXELS));
        let d = parse_cifar_records(&r, CifarVariant::Cifar100, 0).unwrap();
        assert_eq!(d.labels(), &[87]);
        assert_eq!(d.n_classes, 100);
    }

    #[test]
    fn records_round_trip_bytes() {
        let bytes: Vec<u8> = (0..3 * (PIXELS + 1))
            .map(|i| {
                if i % (PIXELS + 1) == 0 {
                    (i / (PIXELS + 1)) as u8
                } else {
                    (i * 7 % 256) as u8
                }
            })
            .collect();
        let d = parse_cifar_records(&bytes, CifarVariant::Cifar10, 0).unwrap();
        assert_eq!(
            write_cifar_records(&d, CifarVariant::Cifar10).unwrap(),
            bytes
        );
    }
}
