use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use reflectnet::arch::Family;
use reflectnet::engine::Tensor;
use reflectnet::experiment::{
    evaluate_experiment, prepare_data, read_metrics_csv, render_explanation_grid,
    render_learning_curves, run_ablation, run_experiment, train_base, AblationGrid, BaseRole,
    DatasetConfig, ExperimentConfig, ExperimentResult, PreparedData, RunOptions, DATA_DIR_ENV,
    DEFAULT_GRID_CHANNELS,
};
use reflectnet::explainer::{explain_batch, gradcam_heatmap};
use reflectnet::training::argmax;

#[derive(Parser)]
#[command(
    name = "reflectnet",
    version,
    about = "Reflective CNN classifiers trained on their own explanations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetPreset {
    Synthetic,
    Cifar10,
    Cifar100,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; base classifiers are cached under it and reused.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Directory with the CIFAR binary files.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print a desk-scale default config.
    InitConfig {
        #[arg(long, value_enum, default_value = "synthetic")]
        dataset: DatasetPreset,
        #[arg(long, default_value = "vgg")]
        family: String,
    },
    /// Train (or load) the base classifier of every seed.
    TrainBase {
        #[command(flatten)]
        common: Common,
    },
    /// Train base and reflective networks per seed, evaluate, and write metrics.
    TrainReflective {
        #[command(flatten)]
        common: Common,
        /// Log every explained-class draw as JSON lines.
        #[arg(long)]
        log_draws: bool,
        /// Skip the per-epoch reflective test evaluation.
        #[arg(long)]
        no_track_test: bool,
    },
    /// Re-evaluate saved checkpoints of a finished run.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Run an ablation grid around the config (or around `base` in `--grid`).
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Grid file; defaults to the desk grid around `--config`.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Render inputs, Grad-CAM and explanation channels of test samples as a PNG grid.
    ExplainImages {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "explanations.png")]
        output: PathBuf,
        #[arg(long, default_value_t = 6)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_GRID_CHANNELS)]
        channels: usize,
        #[arg(long, default_value_t = 3)]
        scale: usize,
    },
    /// Draw learning curves and the accuracy difference from a metrics CSV.
    PlotCurves {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "curves.svg")]
        output: PathBuf,
        /// Run to plot when the file holds several.
        #[arg(long)]
        config_hash: Option<String>,
    },
}

fn load(common: &Common) -> reflectnet::Result<(ExperimentConfig, PreparedData, RunOptions)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let data = prepare_data(&cfg.dataset, common.data_dir.as_deref())?;
    Ok((cfg, data, RunOptions::new(&common.out)))
}

fn report(result: &ExperimentResult) -> bool {
    println!("run {} -> {}", result.config_hash, result.dir.display());
    for s in &result.summary {
        println!(
            "  {:<4} baseline {:.4} ± {:.4}  reflective {:.4} ± {:.4}  delta {:+.4} ± {:.4}  ({} seeds)",
            s.test_mode.to_string(),
            s.baseline_mean,
            s.baseline_std,
            s.reflective_mean,
            s.reflective_std,
            s.delta_mean,
            s.delta_std,
            s.n_seeds
        );
    }
    for f in &result.failures {
        eprintln!("  seed {} failed: {}", f.seed, f.error);
    }
    result.complete()
}

fn display_image(data: &PreparedData, i: usize) -> Tensor<f32> {
    let [c, h, w] = data.split.test.image_shape;
    let hw = h * w;
    let px: Vec<f32> = data
        .split
        .test
        .image(i)
        .iter()
        .enumerate()
        .map(|(j, &v)| (v as f64 * data.stats.std[j / hw] + data.stats.mean[j / hw]) as f32)
        .collect();
    Tensor::new(vec![c, h, w], px).expect("image shape")
}

fn explain_images(
    common: &Common,
    output: &Path,
    samples: usize,
    channels: usize,
    scale: usize,
) -> reflectnet::Result<()> {
    let (cfg, data, opts) = load(common)?;
    let seed = cfg.train.seed;
    let base = train_base(&cfg, &data, seed, BaseRole::Base, &opts)?.model;
    let n = samples.min(data.split.test.len());
    let idx: Vec<usize> = (0..n).collect();
    let (x, _) = data.split.test.batch(&idx);
    let logits = base.logits(&x, None)?;
    let k = base.n_classes();
    let classes: Vec<usize> = logits.data().chunks(k).map(argmax).collect();
    let layer = cfg.layers[0];
    let (_, explanations) = explain_batch(&base, &x, &classes, &[(layer, cfg.depth)])?;
    let hw = data.image_hw();
    let mut images = Vec::new();
    let mut cams = Vec::new();
    for (j, &i) in idx.iter().enumerate() {
        images.push(display_image(&data, i));
        cams.push(gradcam_heatmap(&base, &x.slice0(j), classes[j], layer, hw)?);
    }
    let ex: Vec<Tensor<f32>> = explanations[0].iter().map(|e| e.data.clone()).collect();
    let grid = render_explanation_grid(&images, &cams, &ex, channels, scale, output)?;
    println!(
        "{} rows x {} columns (input, Grad-CAM, {} channels of d={} at L={layer}) -> {}",
        grid.rows,
        grid.cols,
        grid.cols - 2,
        cfg.depth,
        output.display()
    );
    Ok(())
}

fn run(cli: Cli) -> reflectnet::Result<bool> {
    match cli.command {
        Command::InitConfig { dataset, family } => {
            let family = match family.as_str() {
                "vgg" => Family::Vgg,
                "resnet" => Family::Resnet,
                other => {
                    return Err(reflectnet::Error::Config(format!(
                        "unknown family {other:?}"
                    )))
                }
            };
            let dataset = match dataset {
                DatasetPreset::Synthetic => DatasetConfig::synthetic_desk(),
                DatasetPreset::Cifar10 => DatasetConfig::cifar10_desk(),
                DatasetPreset::Cifar100 => DatasetConfig::Cifar100 {
                    n_train: Some(5000),
                    n_test: Some(1000),
                },
            };
            print!("{}", ExperimentConfig::desk(family, dataset).to_toml()?);
            Ok(true)
        }
        Command::TrainBase { common } => {
            let (cfg, data, opts) = load(&common)?;
            let mut ok = true;
            for seed in cfg.seeds() {
                match train_base(&cfg, &data, seed, BaseRole::Base, &opts) {
                    Ok(t) => {
                        let last = t.epochs.last();
                        println!(
                            "seed {seed}: train {:.4} test {:.4} -> {}",
                            last.map_or(f64::NAN, |e| e.train_accuracy),
                            last.and_then(|e| e.test_accuracy).unwrap_or(f64::NAN),
                            t.checkpoint.display()
                        );
                    }
                    Err(e) => {
                        eprintln!("seed {seed} failed: {e}");
                        ok = false;
                    }
                }
            }
            Ok(ok)
        }
        Command::TrainReflective {
            common,
            log_draws,
            no_track_test,
        } => {
            let (cfg, data, mut opts) = load(&common)?;
            opts.log_draws = log_draws;
            opts.track_test = !no_track_test;
            Ok(report(&run_experiment(&cfg, &data, &opts)?))
        }
        Command::Evaluate { common } => {
            let (cfg, data, opts) = load(&common)?;
            Ok(report(&evaluate_experiment(&cfg, &data, &opts)?))
        }
        Command::Ablate { common, grid } => {
            let (cfg, data, opts) = load(&common)?;
            let grid = match grid {
                Some(p) => AblationGrid::from_toml(&std::fs::read_to_string(&p).map_err(|e| {
                    reflectnet::Error::Config(format!("cannot read {}: {e}", p.display()))
                })?)?,
                None => AblationGrid::desk(cfg),
            };
            let table = run_ablation(&grid, &data, &opts)?;
            std::fs::create_dir_all(&opts.out_dir)?;
            let csv = opts.out_dir.join("ablation.csv");
            table.write_csv(&csv)?;
            let md = table.to_markdown();
            std::fs::write(opts.out_dir.join("ablation.md"), &md)?;
            print!("{md}");
            println!("-> {}", csv.display());
            for r in table.incomplete() {
                eprintln!("incomplete: {} {} {:?}", r.dimension, r.value, r.failures);
            }
            Ok(table.incomplete().is_empty())
        }
        Command::ExplainImages {
            common,
            output,
            samples,
            channels,
            scale,
        } => {
            explain_images(&common, &output, samples, channels, scale)?;
            Ok(true)
        }
        Command::PlotCurves {
            metrics,
            output,
            config_hash,
        } => {
            let records = read_metrics_csv(&metrics)?;
            let curves = render_learning_curves(&records, config_hash.as_deref(), &output)?;
            let q = (curves.epochs / 4).max(1);
            let early: Vec<f64> = curves.difference[..q].iter().flatten().copied().collect();
            if !early.is_empty() {
                println!(
                    "mean acc(baseline) - acc(reflective) over the first {q} epochs: {:+.4}",
                    early.iter().sum::<f64>() / early.len() as f64
                );
            }
            if !curves.missing.is_empty() {
                eprintln!("missing epochs: {:?}", curves.missing);
            }
            println!("-> {}", output.display());
            Ok(curves.missing.is_empty())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
