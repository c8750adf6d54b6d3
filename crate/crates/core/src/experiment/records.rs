use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::training::{mean_std, TestMode};

/// Which network and which rule a record's accuracy belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RecordMode {
    /// The non-reflective baseline.
    Base,
    /// Reflective network on training batches, explained classes drawn from the policy.
    Policy,
    /// Reflective network under a test mode.
    Test(TestMode),
}

impl fmt::Display for RecordMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordMode::Base => f.write_str("base"),
            RecordMode::Policy => f.write_str("policy"),
            RecordMode::Test(m) => m.fmt(f),
        }
    }
}

impl FromStr for RecordMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(RecordMode::Base),
            "policy" => Ok(RecordMode::Policy),
            _ => s.parse().map(RecordMode::Test),
        }
    }
}

impl Serialize for RecordMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RecordMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// `train` and `test` rows are per-epoch curves; `eval` rows are the final evaluation,
/// stamped with the number of completed epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordSplit {
    Train,
    Test,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    pub split: RecordSplit,
    pub test_mode: RecordMode,
    pub accuracy: f64,
    pub loss: f64,
    pub seconds: f64,
}

impl MetricsRecord {
    pub fn key(&self) -> (String, u64, usize, RecordSplit, RecordMode) {
        (
            self.config_hash.clone(),
            self.seed,
            self.epoch,
            self.split,
            self.test_mode,
        )
    }
}

/// Rejects duplicate keys and accuracies outside `[0,1]`.
pub fn check_records(records: &[MetricsRecord]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for r in records {
        if !(0.0..=1.0).contains(&r.accuracy) {
            return Err(Error::Format(format!(
                "accuracy {} out of range in {r:?}",
                r.accuracy
            )));
        }
        if !seen.insert(r.key()) {
            return Err(Error::Format(format!("duplicate record {:?}", r.key())));
        }
    }
    Ok(())
}

pub fn emit_metrics_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    check_records(records)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let records = r
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRecord>, _>>()
        .map_err(csv_err)?;
    check_records(&records)?;
    Ok(records)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Per-mode aggregate over the seeds that have both a baseline and a reflective
/// evaluation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub test_mode: TestMode,
    pub n_seeds: usize,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub reflective_mean: f64,
    pub reflective_std: f64,
    /// `reflective_mean - baseline_mean`.
    pub delta_mean: f64,
    /// Sample deviation of the per-seed differences.
    pub delta_std: f64,
}

/// Per-seed `(baseline, reflective)` evaluation accuracies for one config and mode.
pub fn paired_accuracies(
    records: &[MetricsRecord],
    config_hash: &str,
    mode: TestMode,
) -> Vec<(u64, f64, f64)> {
    let eval = |m: RecordMode| -> BTreeMap<u64, f64> {
        records
            .iter()
            .filter(|r| {
                r.config_hash == config_hash && r.split == RecordSplit::Eval && r.test_mode == m
            })
            .map(|r| (r.seed, r.accuracy))
            .collect()
    };
    let base = eval(RecordMode::Base);
    eval(RecordMode::Test(mode))
        .into_iter()
        .filter_map(|(s, a)| base.get(&s).map(|&b| (s, b, a)))
        .collect()
}

/// One row per (config, test mode) present among the evaluation records, in sorted order.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, TestMode)> = records
        .iter()
        .filter(|r| r.split == RecordSplit::Eval)
        .filter_map(|r| match r.test_mode {
            RecordMode::Test(m) => Some((r.config_hash.clone(), m)),
            _ => None,
        })
        .collect();
    keys.sort();
    keys.dedup();
    let mut rows = Vec::new();
    for (hash, mode) in keys {
        let pairs = paired_accuracies(records, &hash, mode);
        if pairs.is_empty() {
            continue;
        }
        let base: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let refl: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        let diff: Vec<f64> = pairs.iter().map(|p| p.2 - p.1).collect();
        let (bm, bs) = mean_std(&base);
        let (rm, rs) = mean_std(&refl);
        rows.push(SummaryRow {
            config_hash: hash,
            test_mode: mode,
            n_seeds: pairs.len(),
            baseline_mean: bm,
            baseline_std: bs,
            reflective_mean: rm,
            reflective_std: rs,
            delta_mean: rm - bm,
            delta_std: mean_std(&diff).1,
        });
    }
    rows
}

pub fn emit_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SummaryRow>, _>>()
        .map_err(csv_err)
}
