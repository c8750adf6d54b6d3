use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::{evaluate_base, evaluate_reflective};
use super::policy::{
    argmax, draw_explained_class, draw_rng, ExplainedClass, SampleAnnotations, TestMode,
};
use super::source::ExplanationProvider;
use crate::arch::ClassifierModel;
use crate::data::{epoch_batches, Dataset, Split};
use crate::engine::{sgd_momentum_step, Mode, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Accuracy of the train-mode predictions made while training on the epoch.
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub seconds: f64,
}

/// One explained-class draw during reflective training.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub sample_id: u64,
    pub epoch: usize,
    pub label: usize,
    pub random_class: usize,
    pub drawn: ExplainedClass,
    pub explained_class: usize,
}

/// Running sums of one epoch.
#[derive(Default)]
struct EpochSums {
    loss: f64,
    correct: usize,
    seen: usize,
}

fn train_step(
    model: &mut ClassifierModel<f32>,
    x: Tensor<f32>,
    explanations: Vec<Tensor<f32>>,
    labels: &[usize],
    lr: f64,
    cfg: &TrainConfig,
    sums: &mut EpochSums,
    where_: impl Fn() -> String,
) -> Result<()> {
    let mut tape = Tape::new(Mode::Train);
    let xi = tape.input(x);
    let ex: Vec<_> = explanations.into_iter().map(|e| tape.input(e)).collect();
    let out = model.forward(&mut tape, xi, &ex)?;
    let loss = tape.softmax_cross_entropy(out.logits, labels)?;
    let l = tape.value(loss).data()[0];
    if !l.is_finite() {
        return Err(Error::Diverged(format!("{}: loss {l}", where_())));
    }
    let grads = tape.backward(loss, None)?;
    model.params_mut().load_grads(&grads);
    sgd_momentum_step(
        model.params_mut(),
        lr as f32,
        cfg.momentum as f32,
        cfg.weight_decay as f32,
    )
    .map_err(|e| Error::Diverged(format!("{}: {e}", where_())))?;
    model.update_running_stats(&tape, &out);

    let z = tape.value(out.logits);
    let k = z.dim(1);
    sums.correct += z
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    sums.loss += l as f64 * labels.len() as f64;
    sums.seen += labels.len();
    Ok(())
}

fn finish(
    epoch: usize,
    lr: f64,
    sums: EpochSums,
    test: Option<(f64, f64)>,
    start: Instant,
) -> EpochMetrics {
    EpochMetrics {
        epoch,
        learning_rate: lr,
        train_accuracy: sums.correct as f64 / sums.seen as f64,
        train_loss: sums.loss / sums.seen as f64,
        test_accuracy: test.map(|t| t.0),
        test_loss: test.map(|t| t.1),
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// SGD with momentum on the training split. With `track_test`, test accuracy is also
/// measured after every epoch.
pub fn train_base_classifier(
    model: &mut ClassifierModel<f32>,
    split: &Split,
    cfg: &TrainConfig,
    track_test: bool,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.lr_at(epoch);
        let mut sums = EpochSums::default();
        for (b, idx) in epoch_batches(split.train.len(), cfg.batch_size, cfg.seed, epoch)
            .into_iter()
            .enumerate()
        {
            let (x, y) = split.train.batch(&idx);
            train_step(model, x, Vec::new(), &y, lr, cfg, &mut sums, || {
                format!("epoch {epoch}, batch {b}")
            })?;
        }
        let test = if track_test {
            Some(evaluate_base(model, &split.test)?)
        } else {
            None
        };
        metrics.push(finish(epoch, lr, sums, test, start));
    }
    Ok(metrics)
}

/// Everything reflective training needs besides the model and the data.
pub struct ReflectiveTraining<'a, 'g> {
    pub provider: &'a mut ExplanationProvider<'g>,
    pub train_set: &'a [ExplainedClass],
    pub annotations: &'a SampleAnnotations,
    pub config: &'a TrainConfig,
    /// Test mode used for per-epoch test accuracy, if tracked.
    pub track_test: Option<TestMode>,
    /// Seed of the test-time `Ran` draws.
    pub test_seed: u64,
}

impl ReflectiveTraining<'_, '_> {
    /// Trains `model` for `config.epochs`. Each sample's explained class is drawn per
    /// epoch from `train_set`; every draw is appended to `draw_log` as one JSON line.
    pub fn run(
        &mut self,
        model: &mut ClassifierModel<f32>,
        split: &Split,
        mut draw_log: Option<&mut dyn Write>,
    ) -> Result<Vec<EpochMetrics>> {
        let cfg = self.config;
        cfg.validate()?;
        let train = &split.train;
        check_annotations(self.annotations, train)?;
        if self.train_set.is_empty() {
            return Err(Error::Config(
                "the set of explained classes is empty".into(),
            ));
        }
        let needs_logits = self.train_set.iter().any(|c| c.needs_logits());
        let mut metrics = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let start = Instant::now();
            let lr = cfg.lr_at(epoch);
            let mut sums = EpochSums::default();
            self.provider.set_noise_round(epoch as u64 + 1);
            for (b, idx) in epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch)
                .into_iter()
                .enumerate()
            {
                let logits = if needs_logits {
                    Some(self.provider.logits(train, &idx)?)
                } else {
                    None
                };
                let mut classes = Vec::with_capacity(idx.len());
                for (j, &i) in idx.iter().enumerate() {
                    let id = train.ids()[i];
                    let (y, yr) = (
                        self.annotations.labels[i],
                        self.annotations.random_classes[i],
                    );
                    let z = logits.as_ref().map(|l| l[j].as_slice());
                    let (drawn, c) = draw_explained_class(
                        y,
                        yr,
                        z,
                        self.train_set,
                        &mut draw_rng(cfg.seed, id, epoch),
                    )?;
                    if let Some(log) = draw_log.as_deref_mut() {
                        let rec = DrawRecord {
                            sample_id: id,
                            epoch,
                            label: y,
                            random_class: yr,
                            drawn,
                            explained_class: c,
                        };
                        serde_json::to_writer(&mut *log, &rec).map_err(std::io::Error::from)?;
                        log.write_all(b"\n")?;
                    }
                    classes.push(c);
                }
                let ex = self.provider.explanations(train, &idx, &classes)?;
                let (x, y) = train.batch(&idx);
                train_step(model, x, ex, &y, lr, cfg, &mut sums, || {
                    format!("epoch {epoch}, batch {b}")
                })?;
            }
            self.provider.set_noise_round(0);
            let test = match self.track_test {
                Some(mode) => {
                    let r = evaluate_reflective(
                        self.provider,
                        model,
                        &split.test,
                        mode,
                        self.test_seed,
                    )?;
                    Some((r.accuracy, r.loss))
                }
                None => None,
            };
            metrics.push(finish(epoch, lr, sums, test, start));
        }
        Ok(metrics)
    }
}

fn check_annotations(a: &SampleAnnotations, data: &Dataset) -> Result<()> {
    if a.ids != data.ids() || a.labels != data.labels() {
        return Err(Error::InvalidArgument(
            "annotations were drawn for a different dataset".into(),
        ));
    }
    Ok(())
}
