//! Config-driven experiments: single runs, ablation grids, metrics files and figures.

mod ablation;
mod config;
mod data;
mod image_grid;
mod plot;
mod records;
mod run;

pub use ablation::{run_ablation, AblationGrid, AblationRow, AblationTable, CellStat, GridCell};
pub use config::{DatasetConfig, ExperimentConfig};
pub use data::{prepare_data, DataInfo, PreparedData, DATA_DIR_ENV};
pub use image_grid::{
    build_explanation_grid, render_explanation_grid, ExplanationGrid, Tile, TileKind,
    DEFAULT_GRID_CHANNELS,
};
pub use plot::{learning_curves, learning_curves_svg, render_learning_curves, LearningCurves};
pub use records::{
    check_records, emit_metrics_csv, emit_summary_csv, paired_accuracies, read_metrics_csv,
    read_summary_csv, summarize, MetricsRecord, RecordMode, RecordSplit, SummaryRow,
};
pub use run::{
    base_dir, evaluate_experiment, load_model, reflective_checkpoint, run_dir, run_experiment,
    train_base, BaseRole, ExperimentResult, FileDigest, Manifest, RunOptions, SeedFailure,
    TrainedNetwork,
};
