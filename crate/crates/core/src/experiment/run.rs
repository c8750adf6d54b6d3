use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::data::{DataInfo, PreparedData};
use super::records::{
    emit_metrics_csv, emit_summary_csv, summarize, MetricsRecord, RecordMode, RecordSplit,
    SummaryRow,
};
use crate::arch::{ClassifierModel, ModelConfig};
use crate::engine::checkpoint;
use crate::error::{Error, Result};
use crate::seed::{self, derive_seed};
use crate::training::{
    assign_random_classes, evaluate_base, evaluate_reflective, initial_reflective,
    train_base_classifier, EpochMetrics, ExpSource, ExplanationProvider, ReflectiveTraining,
    TestMode,
};

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Write every explained-class draw to `draws-seed<seed>.jsonl`.
    pub log_draws: bool,
    /// Measure reflective test accuracy after every epoch.
    pub track_test: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            log_draws: false,
            track_test: true,
        }
    }
}

/// The two kinds of non-reflective classifier an experiment may need per seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseRole {
    /// `C_O`: baseline, generator for Self and Noise, and initialization for Self.
    Base,
    /// Independently trained generator for source Other.
    Other,
}

impl BaseRole {
    fn name(self) -> &'static str {
        match self {
            BaseRole::Base => "base",
            BaseRole::Other => "other",
        }
    }

    fn training_seed(self, seed: u64) -> u64 {
        match self {
            BaseRole::Base => seed,
            BaseRole::Other => derive_seed(&[seed::purpose::OTHER_GENERATOR, seed]),
        }
    }
}

pub struct TrainedNetwork {
    pub model: ClassifierModel<f32>,
    pub epochs: Vec<EpochMetrics>,
    pub checkpoint: PathBuf,
}

pub fn base_dir(cfg: &ExperimentConfig, role: BaseRole, seed: u64, opts: &RunOptions) -> PathBuf {
    opts.out_dir
        .join("base")
        .join(cfg.base_hash())
        .join(format!("{}-seed{seed}", role.name()))
}

pub fn run_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    opts.out_dir.join("runs").join(cfg.hash())
}

pub fn reflective_checkpoint(cfg: &ExperimentConfig, seed: u64, opts: &RunOptions) -> PathBuf {
    run_dir(cfg, opts).join(format!("reflective-seed{seed}.ckpt"))
}

pub fn load_model(config: &ModelConfig, path: &Path) -> Result<ClassifierModel<f32>> {
    let mut model = ClassifierModel::build(config, &mut seed::stream(&[0]))?;
    model.load_entries(&checkpoint::load(path)?)?;
    Ok(model)
}

/// Trains the base classifier for `seed`, or loads it when an earlier run with the same
/// base settings already saved it.
pub fn train_base(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
    role: BaseRole,
    opts: &RunOptions,
) -> Result<TrainedNetwork> {
    let dir = base_dir(cfg, role, seed, opts);
    let ckpt = dir.join("model.ckpt");
    let epochs_path = dir.join("epochs.json");
    if ckpt.exists() && epochs_path.exists() {
        let model = load_model(&cfg.model_config(), &ckpt)?;
        let epochs = serde_json::from_slice(&fs::read(&epochs_path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", epochs_path.display())))?;
        return Ok(TrainedNetwork {
            model,
            epochs,
            checkpoint: ckpt,
        });
    }
    let s = role.training_seed(seed);
    let mut model = ClassifierModel::build(
        &cfg.model_config(),
        &mut seed::stream(&[seed::purpose::INIT, s]),
    )?;
    let epochs = train_base_classifier(
        &mut model,
        &data.split,
        &cfg.train.clone().with_seed(s),
        true,
    )?;
    fs::create_dir_all(&dir)?;
    checkpoint::save(&ckpt, &model.to_entries())?;
    fs::write(
        &epochs_path,
        serde_json::to_vec_pretty(&epochs).expect("metrics serialize"),
    )?;
    Ok(TrainedNetwork {
        model,
        epochs,
        checkpoint: ckpt,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Written next to the metrics of every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub base_hash: String,
    pub config: ExperimentConfig,
    pub data: DataInfo,
    pub seeds: Vec<u64>,
    pub completed_seeds: Vec<u64>,
    pub failures: Vec<SeedFailure>,
    pub checkpoints: Vec<FileDigest>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config_hash: String,
    pub dir: PathBuf,
    pub records: Vec<MetricsRecord>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<SeedFailure>,
}

impl ExperimentResult {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn epoch_records(
    hash: &str,
    seed: u64,
    epochs: &[EpochMetrics],
    train_mode: RecordMode,
    test_mode: RecordMode,
) -> Vec<MetricsRecord> {
    let mut out = Vec::new();
    for e in epochs {
        let row = |split, mode, accuracy, loss| MetricsRecord {
            config_hash: hash.to_string(),
            seed,
            epoch: e.epoch,
            split,
            test_mode: mode,
            accuracy,
            loss,
            seconds: e.seconds,
        };
        out.push(row(
            RecordSplit::Train,
            train_mode,
            e.train_accuracy,
            e.train_loss,
        ));
        if let (Some(a), Some(l)) = (e.test_accuracy, e.test_loss) {
            out.push(row(RecordSplit::Test, test_mode, a, l));
        }
    }
    out
}

fn tracked_mode(cfg: &ExperimentConfig) -> TestMode {
    if cfg.test_modes.contains(&TestMode::Pred) {
        TestMode::Pred
    } else {
        cfg.test_modes[0]
    }
}

/// Evaluation rows of one seed: the baseline and every configured test mode.
fn evaluation_records(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
    base: &ClassifierModel<f32>,
    generator: &ClassifierModel<f32>,
    reflective: &ClassifierModel<f32>,
) -> Result<Vec<MetricsRecord>> {
    let hash = cfg.hash();
    let row = |mode, accuracy, loss, start: Instant| MetricsRecord {
        config_hash: hash.clone(),
        seed,
        epoch: cfg.train.epochs,
        split: RecordSplit::Eval,
        test_mode: mode,
        accuracy,
        loss,
        seconds: start.elapsed().as_secs_f64(),
    };
    let start = Instant::now();
    let (acc, loss) = evaluate_base(base, &data.split.test)?;
    let mut out = vec![row(RecordMode::Base, acc, loss, start)];
    let mut provider =
        ExplanationProvider::new(cfg.source, generator, cfg.attach(), data.image_hw(), seed)?;
    for &mode in &cfg.test_modes {
        let start = Instant::now();
        let r = evaluate_reflective(&mut provider, reflective, &data.split.test, mode, seed)?;
        out.push(row(RecordMode::Test(mode), r.accuracy, r.loss, start));
    }
    Ok(out)
}

fn check_data(cfg: &ExperimentConfig, data: &PreparedData) -> Result<()> {
    cfg.validate()?;
    if data.split.train.n_classes != cfg.dataset.n_classes() {
        return Err(Error::Config(format!(
            "data has {} classes, config expects {}",
            data.split.train.n_classes,
            cfg.dataset.n_classes()
        )));
    }
    Ok(())
}

fn run_seed(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
    opts: &RunOptions,
    checkpoints: &mut Vec<PathBuf>,
) -> Result<Vec<MetricsRecord>> {
    let hash = cfg.hash();
    let dir = run_dir(cfg, opts);
    let base = train_base(cfg, data, seed, BaseRole::Base, opts)?;
    checkpoints.push(base.checkpoint.clone());
    let mut records = epoch_records(
        &hash,
        seed,
        &base.epochs,
        RecordMode::Base,
        RecordMode::Base,
    );

    let other = match cfg.source {
        ExpSource::Other => {
            let o = train_base(cfg, data, seed, BaseRole::Other, opts)?;
            checkpoints.push(o.checkpoint.clone());
            Some(o)
        }
        _ => None,
    };
    let generator = other.as_ref().map_or(&base.model, |o| &o.model);

    let mut provider =
        ExplanationProvider::new(cfg.source, generator, cfg.attach(), data.image_hw(), seed)?;
    let annotations = assign_random_classes(&data.split.train, cfg.dataset.n_classes(), seed)?;
    let init_seed = derive_seed(&[seed::purpose::REFLECTIVE_INIT, seed]);
    let mut reflective = initial_reflective(cfg.source, &base.model, cfg.attach(), init_seed)?;
    let train_cfg = cfg.train.clone().with_seed(seed);
    let tracked = tracked_mode(cfg);
    let mut log = if opts.log_draws {
        Some(BufWriter::new(fs::File::create(
            dir.join(format!("draws-seed{seed}.jsonl")),
        )?))
    } else {
        None
    };
    let epochs = ReflectiveTraining {
        provider: &mut provider,
        train_set: &cfg.train_set,
        annotations: &annotations,
        config: &train_cfg,
        track_test: opts.track_test.then_some(tracked),
        test_seed: seed,
    }
    .run(
        &mut reflective,
        &data.split,
        log.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    records.extend(epoch_records(
        &hash,
        seed,
        &epochs,
        RecordMode::Policy,
        RecordMode::Test(tracked),
    ));

    let ckpt = reflective_checkpoint(cfg, seed, opts);
    checkpoint::save(&ckpt, &reflective.to_entries())?;
    checkpoints.push(ckpt);
    records.extend(evaluation_records(
        cfg,
        data,
        seed,
        &base.model,
        generator,
        &reflective,
    )?);
    Ok(records)
}

/// Trains (or reuses) the base classifier and trains one reflective network per seed,
/// then evaluates every test mode. A failing seed is recorded and the rest continue.
/// Writes `config.toml`, `metrics.csv`, `summary.csv` and `manifest.json` to the run
/// directory.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    opts: &RunOptions,
) -> Result<ExperimentResult> {
    check_data(cfg, data)?;
    let dir = run_dir(cfg, opts);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut checkpoints = Vec::new();
    let mut completed = Vec::new();
    for seed in cfg.seeds() {
        match run_seed(cfg, data, seed, opts, &mut checkpoints) {
            Ok(r) => {
                records.extend(r);
                completed.push(seed);
            }
            Err(e) => failures.push(SeedFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    finish_run(
        cfg,
        data,
        opts,
        "metrics.csv",
        records,
        failures,
        completed,
        checkpoints,
    )
}

/// Re-evaluates the saved checkpoints of a finished run without training.
pub fn evaluate_experiment(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    opts: &RunOptions,
) -> Result<ExperimentResult> {
    check_data(cfg, data)?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut checkpoints = Vec::new();
    let mut completed = Vec::new();
    let refl_cfg = cfg.model_config().with_attach(cfg.attach());
    for seed in cfg.seeds() {
        let attempt = || -> Result<Vec<MetricsRecord>> {
            let base_ckpt = base_dir(cfg, BaseRole::Base, seed, opts).join("model.ckpt");
            let base = load_model(&cfg.model_config(), &base_ckpt)?;
            let other = match cfg.source {
                ExpSource::Other => Some(load_model(
                    &cfg.model_config(),
                    &base_dir(cfg, BaseRole::Other, seed, opts).join("model.ckpt"),
                )?),
                _ => None,
            };
            let refl = load_model(&refl_cfg, &reflective_checkpoint(cfg, seed, opts))?;
            evaluation_records(
                cfg,
                data,
                seed,
                &base,
                other.as_ref().unwrap_or(&base),
                &refl,
            )
        };
        match attempt() {
            Ok(r) => {
                records.extend(r);
                completed.push(seed);
                checkpoints.push(reflective_checkpoint(cfg, seed, opts));
            }
            Err(e) => failures.push(SeedFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    finish_run(
        cfg,
        data,
        opts,
        "eval.csv",
        records,
        failures,
        completed,
        checkpoints,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_run(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    opts: &RunOptions,
    metrics_name: &str,
    records: Vec<MetricsRecord>,
    failures: Vec<SeedFailure>,
    completed: Vec<u64>,
    checkpoints: Vec<PathBuf>,
) -> Result<ExperimentResult> {
    let dir = run_dir(cfg, opts);
    fs::create_dir_all(&dir)?;
    emit_metrics_csv(&records, &dir.join(metrics_name))?;
    let summary = summarize(&records);
    emit_summary_csv(&summary, &dir.join("summary.csv"))?;
    let mut digests = Vec::new();
    for p in checkpoints {
        digests.push(FileDigest {
            path: p
                .strip_prefix(&opts.out_dir)
                .unwrap_or(&p)
                .display()
                .to_string(),
            sha256: hex::encode(Sha256::digest(fs::read(&p)?)),
        });
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        base_hash: cfg.base_hash(),
        config: cfg.clone(),
        data: data.info.clone(),
        seeds: cfg.seeds(),
        completed_seeds: completed,
        failures: failures.clone(),
        checkpoints: digests,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(ExperimentResult {
        config_hash: cfg.hash(),
        dir,
        records,
        summary,
        failures,
    })
}
