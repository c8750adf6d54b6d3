use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::PreparedData;
use super::records::paired_accuracies;
use super::run::{run_experiment, RunOptions};
use crate::error::{Error, Result};
use crate::training::{mean_std, ExpSource, ExplainedClass, TestMode};

/// The default configuration plus, per dimension, the values to try one at a time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    #[serde(default)]
    pub depths: Vec<usize>,
    #[serde(default)]
    pub train_sets: Vec<Vec<ExplainedClass>>,
    #[serde(default)]
    pub layers: Vec<Vec<usize>>,
    #[serde(default)]
    pub sources: Vec<ExpSource>,
    pub base: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub dimension: &'static str,
    pub value: String,
    pub config: ExperimentConfig,
}

fn list<T: std::fmt::Display>(items: &[T]) -> String {
    let parts: Vec<String> = items.iter().map(ToString::to_string).collect();
    format!("{{{}}}", parts.join(","))
}

impl AblationGrid {
    /// Rows of the desk-scale ablation: d in {1,16}; {Cor}, {Pre}, {Ran}, {Cor,Ran},
    /// {Pre,2nd}; L in {2}, {2,3}, {3}; Noise, Other, Self.
    pub fn desk(base: ExperimentConfig) -> Self {
        use ExplainedClass::*;
        Self {
            depths: vec![1, 16],
            train_sets: vec![
                vec![Cor],
                vec![Pre],
                vec![Ran],
                vec![Cor, Ran],
                vec![Pre, Kth(2)],
            ],
            layers: vec![vec![2], vec![2, 3], vec![3]],
            sources: vec![ExpSource::Noise, ExpSource::Other, ExpSource::SelfNet],
            base,
        }
    }

    /// The default row, then every single-dimension variation that differs from it.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut cells = vec![GridCell {
            dimension: "default",
            value: "-".into(),
            config: self.base.clone(),
        }];
        let mut push = |dimension: &'static str, value: String, config: ExperimentConfig| {
            if !cells.iter().any(|c| c.config == config) {
                cells.push(GridCell {
                    dimension,
                    value,
                    config,
                });
            }
        };
        for &d in &self.depths {
            push(
                "d",
                d.to_string(),
                ExperimentConfig {
                    depth: d,
                    ..self.base.clone()
                },
            );
        }
        for set in &self.train_sets {
            push(
                "ExpCl_Train",
                list(set),
                ExperimentConfig {
                    train_set: set.clone(),
                    ..self.base.clone()
                },
            );
        }
        for l in &self.layers {
            push(
                "L",
                list(l),
                ExperimentConfig {
                    layers: l.clone(),
                    ..self.base.clone()
                },
            );
        }
        for &s in &self.sources {
            push(
                "ExpSource",
                s.to_string(),
                ExperimentConfig {
                    source: s,
                    ..self.base.clone()
                },
            );
        }
        cells
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let grid: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for c in grid.cells() {
            c.config.validate()?;
        }
        Ok(grid)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub n_seeds: usize,
    pub delta_mean: f64,
    /// Deviation of the per-seed differences.
    pub delta_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dimension: String,
    pub value: String,
    pub config_hash: String,
    pub baseline_mean: Option<f64>,
    /// One entry per column of the table; `None` when no seed finished.
    pub cells: Vec<Option<CellStat>>,
    /// Seeds that failed, with their errors.
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub modes: Vec<TestMode>,
    pub n_seeds: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Rows whose cells do not all carry `n_seeds` runs.
    pub fn incomplete(&self) -> Vec<&AblationRow> {
        self.rows
            .iter()
            .filter(|r| {
                r.cells
                    .iter()
                    .any(|c| c.as_ref().is_none_or(|c| c.n_seeds != self.n_seeds))
            })
            .collect()
    }

    /// CSV with `<mode>_mean`, `<mode>_std` and `<mode>_n` columns per test mode, in
    /// accuracy points.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let mut header = vec![
            "dimension".to_string(),
            "value".into(),
            "config_hash".into(),
            "baseline".into(),
        ];
        for m in &self.modes {
            header.extend([format!("{m}_mean"), format!("{m}_std"), format!("{m}_n")]);
        }
        header.push("status".into());
        w.write_record(&header)
            .map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.rows {
            let mut rec = vec![
                r.dimension.clone(),
                r.value.clone(),
                r.config_hash.clone(),
                r.baseline_mean
                    .map_or(String::new(), |b| (100.0 * b).to_string()),
            ];
            for c in &r.cells {
                match c {
                    Some(c) => rec.extend([
                        (100.0 * c.delta_mean).to_string(),
                        (100.0 * c.delta_std).to_string(),
                        c.n_seeds.to_string(),
                    ]),
                    None => rec.extend([String::new(), String::new(), "0".into()]),
                }
            }
            rec.push(self.status(r));
            w.write_record(&rec)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    fn status(&self, r: &AblationRow) -> String {
        let done = r
            .cells
            .iter()
            .filter_map(|c| c.as_ref().map(|c| c.n_seeds))
            .min()
            .unwrap_or(0);
        if done == self.n_seeds && r.cells.iter().all(Option::is_some) {
            "ok".into()
        } else {
            format!("missing {}/{} seeds", self.n_seeds - done, self.n_seeds)
        }
    }

    /// Markdown table of delta accuracy in points, `mean ± std`.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| variation | value |");
        for m in &self.modes {
            let _ = write!(s, " {m} |");
        }
        s.push_str(" status |\n|---|---|");
        for _ in &self.modes {
            s.push_str("---|");
        }
        s.push_str("---|\n");
        for r in &self.rows {
            let _ = write!(s, "| {} | {} |", r.dimension, r.value);
            for c in &r.cells {
                match c {
                    Some(c) => {
                        let _ = write!(
                            s,
                            " {:+.2} ± {:.2} |",
                            100.0 * c.delta_mean,
                            100.0 * c.delta_std
                        );
                    }
                    None => s.push_str(" missing |"),
                }
            }
            let _ = writeln!(s, " {} |", self.status(r));
        }
        s
    }
}

/// Runs every grid cell. Base classifiers are shared across cells through the on-disk
/// cache in `opts.out_dir`; a failing cell is flagged in the table and the rest go on.
pub fn run_ablation(
    grid: &AblationGrid,
    data: &PreparedData,
    opts: &RunOptions,
) -> Result<AblationTable> {
    let modes = grid.base.test_modes.clone();
    let mut rows = Vec::new();
    for cell in grid.cells() {
        let hash = cell.config.hash();
        let mut row = AblationRow {
            dimension: cell.dimension.to_string(),
            value: cell.value.clone(),
            config_hash: hash.clone(),
            baseline_mean: None,
            cells: vec![None; modes.len()],
            failures: Vec::new(),
        };
        match run_experiment(&cell.config, data, opts) {
            Ok(result) => {
                row.failures = result
                    .failures
                    .iter()
                    .map(|f| format!("seed {}: {}", f.seed, f.error))
                    .collect();
                for (i, &m) in modes.iter().enumerate() {
                    let pairs = paired_accuracies(&result.records, &hash, m);
                    if pairs.is_empty() {
                        continue;
                    }
                    let base: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                    let refl: Vec<f64> = pairs.iter().map(|p| p.2).collect();
                    let diff: Vec<f64> = pairs.iter().map(|p| p.2 - p.1).collect();
                    row.baseline_mean = Some(mean_std(&base).0);
                    row.cells[i] = Some(CellStat {
                        n_seeds: pairs.len(),
                        delta_mean: mean_std(&refl).0 - mean_std(&base).0,
                        delta_std: mean_std(&diff).1,
                    });
                }
            }
            Err(e) => row.failures.push(e.to_string()),
        }
        rows.push(row);
    }
    Ok(AblationTable {
        modes,
        n_seeds: grid.base.n_seeds,
        rows,
    })
}
