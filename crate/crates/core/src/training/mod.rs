//! Training and testing protocol: explained-class policies, explanation sources, base and
//! reflective training, and evaluation.

mod config;
mod eval;
mod policy;
mod source;
mod train;

pub use config::TrainConfig;
pub use eval::{
    evaluate, evaluate_base, evaluate_reflective, mean_std, predict_reflective, Evaluation,
    ModeResult, ReflectiveEval, ReflectivePrediction,
};
pub use policy::{
    argmax, assign_random_classes, draw_explained_class, draw_rng, kth_largest,
    sample_explained_class, test_class, ExpSource, ExplainedClass, SampleAnnotations, TestMode,
};
pub use source::ExplanationProvider;
pub use train::{train_base_classifier, DrawRecord, EpochMetrics, ReflectiveTraining};

use crate::arch::{AttachSpec, ClassifierModel};
use crate::error::Result;
use crate::seed;

/// Initial reflective network for `source`: for `Self`, the base classifier's weights
/// with zeroed branch read-in (so it starts as the same function); otherwise a fresh
/// network seeded by `seed`.
pub fn initial_reflective(
    source: ExpSource,
    base: &ClassifierModel<f32>,
    attach: Vec<AttachSpec>,
    seed: u64,
) -> Result<ClassifierModel<f32>> {
    match source {
        ExpSource::SelfNet => {
            let mut rng = seed::stream(&[seed::purpose::BRANCH_INIT, seed]);
            ClassifierModel::reflective_identity_from(base, attach, &mut rng)
        }
        ExpSource::Other | ExpSource::Noise => {
            let cfg = base.config().base().with_attach(attach);
            ClassifierModel::build(&cfg, &mut seed::stream(&[seed::purpose::INIT, seed]))
        }
    }
}
