use std::fs;
use std::path::Path;
use std::process::Command;

use reflectnet::arch::Family;
use reflectnet::experiment::*;
use reflectnet::training::{DrawRecord, ExpSource, ExplainedClass, TestMode, TrainConfig};

fn tiny() -> ExperimentConfig {
    let dataset = DatasetConfig::Synthetic {
        n_classes: 4,
        size: 16,
        n_train: 96,
        n_test: 40,
        noise: 0.1,
        clutter: 0,
        seed: 2,
    };
    let mut cfg = ExperimentConfig::desk(Family::Vgg, dataset);
    cfg.depth = 4;
    cfg.n_seeds = 2;
    cfg.train = TrainConfig {
        batch_size: 32,
        learning_rate: 0.05,
        ..TrainConfig::scaled(3)
    };
    cfg
}

fn data(cfg: &ExperimentConfig) -> PreparedData {
    prepare_data(&cfg.dataset, None).unwrap()
}

#[test]
fn rerun_reproduces_the_summary_bit_for_bit() {
    let cfg = tiny();
    let d = data(&cfg);
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();

    let a = run_experiment(&cfg, &d, &RunOptions::new(first.path())).unwrap();
    assert!(a.complete(), "{:?}", a.failures);
    let summary_a = fs::read(a.dir.join("summary.csv")).unwrap();

    let b = run_experiment(&cfg, &d, &RunOptions::new(second.path())).unwrap();
    assert_eq!(fs::read(b.dir.join("summary.csv")).unwrap(), summary_a);

    // Same directory again: base classifiers now come from the cache.
    let c = run_experiment(&cfg, &d, &RunOptions::new(first.path())).unwrap();
    assert_eq!(fs::read(c.dir.join("summary.csv")).unwrap(), summary_a);

    let strip = |r: &[MetricsRecord]| -> Vec<_> {
        r.iter()
            .map(|m| (m.key(), m.accuracy.to_bits(), m.loss.to_bits()))
            .collect()
    };
    assert_eq!(strip(&a.records), strip(&b.records));
    assert_eq!(strip(&a.records), strip(&c.records));
}

#[test]
fn run_writes_complete_records_and_manifest() {
    let cfg = tiny();
    let d = data(&cfg);
    let out = tempfile::tempdir().unwrap();
    let r = run_experiment(&cfg, &d, &RunOptions::new(out.path())).unwrap();
    check_records(&r.records).unwrap();

    let on_disk = read_metrics_csv(&r.dir.join("metrics.csv")).unwrap();
    assert_eq!(on_disk, r.records);
    assert_eq!(
        read_summary_csv(&r.dir.join("summary.csv")).unwrap(),
        r.summary
    );
    assert_eq!(
        ExperimentConfig::load(&r.dir.join("config.toml")).unwrap(),
        cfg
    );

    let epochs = cfg.train.epochs;
    for seed in cfg.seeds() {
        let of = |split: RecordSplit, mode: RecordMode| {
            r.records
                .iter()
                .filter(|m| m.seed == seed && m.split == split && m.test_mode == mode)
                .count()
        };
        assert_eq!(of(RecordSplit::Train, RecordMode::Base), epochs);
        assert_eq!(of(RecordSplit::Test, RecordMode::Base), epochs);
        assert_eq!(of(RecordSplit::Train, RecordMode::Policy), epochs);
        assert_eq!(
            of(RecordSplit::Test, RecordMode::Test(TestMode::Pred)),
            epochs
        );
        assert_eq!(of(RecordSplit::Eval, RecordMode::Base), 1);
        for &m in &cfg.test_modes {
            assert_eq!(of(RecordSplit::Eval, RecordMode::Test(m)), 1);
        }
        assert!(reflective_checkpoint(&cfg, seed, &RunOptions::new(out.path())).exists());
    }

    assert_eq!(r.summary.len(), cfg.test_modes.len());
    for s in &r.summary {
        assert_eq!(s.n_seeds, cfg.n_seeds);
        let pairs = paired_accuracies(&r.records, &r.config_hash, s.test_mode);
        let diffs: Vec<f64> = pairs.iter().map(|(_, b, f)| f - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        assert!((s.delta_mean - mean).abs() < 1e-12);
        assert!((s.delta_mean - (s.reflective_mean - s.baseline_mean)).abs() < 1e-12);
    }

    let manifest: Manifest =
        serde_json::from_slice(&fs::read(r.dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config_hash, cfg.hash());
    assert_eq!(manifest.completed_seeds, cfg.seeds());
    assert!(manifest.failures.is_empty());
    assert_eq!(manifest.data.checksum, d.info.checksum);
}

#[test]
fn evaluation_of_saved_checkpoints_matches_the_run() {
    let cfg = tiny();
    let d = data(&cfg);
    let out = tempfile::tempdir().unwrap();
    let opts = RunOptions::new(out.path());
    let run = run_experiment(&cfg, &d, &opts).unwrap();
    let again = evaluate_experiment(&cfg, &d, &opts).unwrap();
    assert!(again.complete());
    let eval = |r: &[MetricsRecord]| -> Vec<_> {
        r.iter()
            .filter(|m| m.split == RecordSplit::Eval)
            .map(|m| (m.seed, m.test_mode, m.accuracy.to_bits(), m.loss.to_bits()))
            .collect()
    };
    assert_eq!(eval(&again.records), eval(&run.records));
    assert_eq!(again.summary, run.summary);
}

#[test]
fn draw_log_follows_the_policy() {
    let mut cfg = tiny();
    cfg.n_seeds = 1;
    cfg.train_set = vec![ExplainedClass::Cor, ExplainedClass::Ran];
    let d = data(&cfg);
    let out = tempfile::tempdir().unwrap();
    let mut opts = RunOptions::new(out.path());
    opts.log_draws = true;
    let r = run_experiment(&cfg, &d, &opts).unwrap();
    let seed = cfg.seeds()[0];
    let text = fs::read_to_string(r.dir.join(format!("draws-seed{seed}.jsonl"))).unwrap();
    let draws: Vec<DrawRecord> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(draws.len(), d.split.train.len() * cfg.train.epochs);
    let mut fixed = std::collections::BTreeMap::new();
    for dr in &draws {
        let y_r = dr.random_class;
        assert!(dr.explained_class == dr.label || dr.explained_class == y_r);
        match dr.drawn {
            ExplainedClass::Cor => assert_eq!(dr.explained_class, dr.label),
            ExplainedClass::Ran => assert_eq!(dr.explained_class, y_r),
            other => panic!("{other} is not in the training multiset"),
        }
        assert_eq!(*fixed.entry(dr.sample_id).or_insert(y_r), y_r);
    }
}

#[test]
fn failing_seeds_are_recorded_and_the_run_continues() {
    let mut cfg = tiny();
    cfg.train.learning_rate = 1e12;
    let d = data(&cfg);
    let out = tempfile::tempdir().unwrap();
    let r = run_experiment(&cfg, &d, &RunOptions::new(out.path())).unwrap();
    assert!(!r.complete());
    assert_eq!(r.failures.len(), cfg.n_seeds);
    assert!(r.summary.is_empty());
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(r.dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.failures.len(), cfg.n_seeds);
    assert!(manifest.completed_seeds.is_empty());
}

#[test]
fn small_ablation_reports_every_cell() {
    let mut base = tiny();
    base.n_seeds = 1;
    let grid = AblationGrid {
        depths: vec![1, 4],
        train_sets: vec![],
        layers: vec![],
        sources: vec![ExpSource::Noise],
        base,
    };
    let cells = grid.cells();
    let d = data(&grid.base);
    let out = tempfile::tempdir().unwrap();
    let table = run_ablation(&grid, &d, &RunOptions::new(out.path())).unwrap();
    assert_eq!(table.rows.len(), cells.len());
    assert!(table.incomplete().is_empty());
    for row in &table.rows {
        assert_eq!(row.cells.len(), table.modes.len());
        assert!(row
            .cells
            .iter()
            .all(|c| c.as_ref().is_some_and(|s| s.n_seeds == 1)));
    }
    let md = table.to_markdown();
    for m in &table.modes {
        assert!(md.contains(&m.to_string()));
    }
    // Every cell shares one cached base classifier.
    assert_eq!(fs::read_dir(out.path().join("base")).unwrap().count(), 1);
}

fn cli(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_reflectnet"))
        .args(args)
        .current_dir(cwd)
        .env_remove(DATA_DIR_ENV)
        .output()
        .unwrap()
}

#[test]
fn command_line_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();

    let init = cli(&["init-config"], p);
    assert!(init.status.success());
    let printed = ExperimentConfig::from_toml(&String::from_utf8(init.stdout).unwrap()).unwrap();
    assert_eq!(
        printed,
        ExperimentConfig::desk(Family::Vgg, DatasetConfig::synthetic_desk())
    );

    let mut cfg = tiny();
    cfg.n_seeds = 1;
    fs::write(p.join("tiny.toml"), cfg.to_toml().unwrap()).unwrap();

    let train = cli(
        &[
            "train-reflective",
            "--config",
            "tiny.toml",
            "--out",
            "out",
            "--log-draws",
        ],
        p,
    );
    assert!(
        train.status.success(),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    let run = p.join("out/runs").join(cfg.hash());
    for f in [
        "metrics.csv",
        "summary.csv",
        "manifest.json",
        "config.toml",
        "draws-seed0.jsonl",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }

    let eval = cli(&["evaluate", "--config", "tiny.toml", "--out", "out"], p);
    assert!(
        eval.status.success(),
        "{}",
        String::from_utf8_lossy(&eval.stderr)
    );
    assert!(run.join("eval.csv").exists());

    let metrics = run.join("metrics.csv");
    let plot = cli(
        &[
            "plot-curves",
            "--metrics",
            metrics.to_str().unwrap(),
            "--output",
            "curves.svg",
        ],
        p,
    );
    assert!(
        plot.status.success(),
        "{}",
        String::from_utf8_lossy(&plot.stderr)
    );
    assert!(fs::read_to_string(p.join("curves.svg"))
        .unwrap()
        .starts_with("<svg"));

    let grid = cli(
        &[
            "explain-images",
            "--config",
            "tiny.toml",
            "--out",
            "out",
            "--output",
            "grid.png",
            "--samples",
            "3",
        ],
        p,
    );
    assert!(
        grid.status.success(),
        "{}",
        String::from_utf8_lossy(&grid.stderr)
    );
    assert_eq!(&fs::read(p.join("grid.png")).unwrap()[1..4], b"PNG");
}

#[test]
fn command_line_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let missing = cli(&["train-base", "--config", "absent.toml"], p);
    assert_eq!(missing.status.code(), Some(1));
    assert!(!missing.stderr.is_empty());

    let cifar = ExperimentConfig::desk(Family::Vgg, DatasetConfig::cifar10_desk());
    fs::write(p.join("cifar.toml"), cifar.to_toml().unwrap()).unwrap();
    let no_data = cli(&["train-base", "--config", "cifar.toml"], p);
    assert_eq!(no_data.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&no_data.stderr).contains(DATA_DIR_ENV));

    let mut diverging = tiny();
    diverging.n_seeds = 1;
    diverging.train.learning_rate = 1e12;
    fs::write(p.join("bad.toml"), diverging.to_toml().unwrap()).unwrap();
    let failed = cli(
        &["train-reflective", "--config", "bad.toml", "--out", "out"],
        p,
    );
    assert_eq!(failed.status.code(), Some(2));
}
