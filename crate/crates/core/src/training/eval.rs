use serde::{Deserialize, Serialize};

use super::policy::{argmax, test_class, TestMode};
use super::source::ExplanationProvider;
use crate::arch::ClassifierModel;
use crate::data::{sequential_batches, Dataset};
use crate::engine::{softmax_rows, Tensor};
use crate::error::{Error, Result};

const EVAL_BATCH: usize = 250;

/// Accuracy and mean cross-entropy of a set of logits.
fn score(logits: &Tensor<f32>, labels: &[usize]) -> (usize, f64) {
    let k = logits.dim(1);
    let probs = softmax_rows(logits.data(), k);
    let mut correct = 0;
    let mut loss = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        let row = &logits.data()[j * k..(j + 1) * k];
        correct += usize::from(argmax(row) == y);
        loss -= (probs[j * k + y] as f64).max(1e-30).ln();
    }
    (correct, loss)
}

fn non_empty(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    Ok(())
}

/// Evaluation-mode accuracy and mean loss of a base classifier.
pub fn evaluate_base(model: &ClassifierModel<f32>, data: &Dataset) -> Result<(f64, f64)> {
    non_empty(data)?;
    let (mut correct, mut loss) = (0, 0.0);
    for idx in sequential_batches(data.len(), EVAL_BATCH) {
        let (x, y) = data.batch(&idx);
        let (c, l) = score(&model.logits(&x, None)?, &y);
        correct += c;
        loss += l;
    }
    let n = data.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Result of the two-network prediction for a batch.
#[derive(Clone, Debug)]
pub struct ReflectivePrediction {
    /// Class whose explanation was fed to the reflective network, per sample.
    pub explained: Vec<usize>,
    pub logits: Tensor<f32>,
}

impl ReflectivePrediction {
    pub fn predicted(&self) -> Vec<usize> {
        let k = self.logits.dim(1);
        self.logits.data().chunks(k).map(argmax).collect()
    }
}

/// Generator pass picks the explained class per `mode`, the generator explains it, and
/// the reflective network classifies input and explanation.
pub fn predict_reflective(
    provider: &mut ExplanationProvider<'_>,
    reflective: &ClassifierModel<f32>,
    data: &Dataset,
    indices: &[usize],
    mode: TestMode,
    ground_truth: Option<&[usize]>,
    seed: u64,
) -> Result<ReflectivePrediction> {
    let logits = provider.logits(data, indices)?;
    let mut explained = Vec::with_capacity(indices.len());
    for (j, &i) in indices.iter().enumerate() {
        let label = ground_truth.map(|g| g[j]);
        explained.push(test_class(mode, &logits[j], label, seed, data.ids()[i])?);
    }
    let ex = provider.explanations(data, indices, &explained)?;
    let (x, _) = data.batch(indices);
    Ok(ReflectivePrediction {
        explained,
        logits: reflective.logits(&x, Some(&ex))?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectiveEval {
    pub mode: TestMode,
    pub accuracy: f64,
    pub loss: f64,
    pub explained: Vec<usize>,
    pub predicted: Vec<usize>,
}

pub fn evaluate_reflective(
    provider: &mut ExplanationProvider<'_>,
    reflective: &ClassifierModel<f32>,
    data: &Dataset,
    mode: TestMode,
    seed: u64,
) -> Result<ReflectiveEval> {
    non_empty(data)?;
    let (mut correct, mut loss) = (0, 0.0);
    let mut explained = Vec::with_capacity(data.len());
    let mut predicted = Vec::with_capacity(data.len());
    for idx in sequential_batches(data.len(), EVAL_BATCH) {
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
        let p = predict_reflective(provider, reflective, data, &idx, mode, Some(&labels), seed)?;
        let (c, l) = score(&p.logits, &labels);
        correct += c;
        loss += l;
        predicted.extend(p.predicted());
        explained.extend(p.explained);
    }
    let n = data.len() as f64;
    Ok(ReflectiveEval {
        mode,
        accuracy: correct as f64 / n,
        loss: loss / n,
        explained,
        predicted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: TestMode,
    pub accuracy: f64,
    pub loss: f64,
    /// Reflective minus baseline accuracy.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub baseline_accuracy: f64,
    pub baseline_loss: f64,
    pub modes: Vec<ModeResult>,
}

impl Evaluation {
    pub fn mode(&self, mode: TestMode) -> Option<&ModeResult> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// Baseline accuracy of `baseline` and the reflective accuracy per test mode.
pub fn evaluate(
    baseline: &ClassifierModel<f32>,
    provider: &mut ExplanationProvider<'_>,
    reflective: &ClassifierModel<f32>,
    data: &Dataset,
    modes: &[TestMode],
    seed: u64,
) -> Result<Evaluation> {
    let (baseline_accuracy, baseline_loss) = evaluate_base(baseline, data)?;
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let r = evaluate_reflective(provider, reflective, data, mode, seed)?;
        out.push(ModeResult {
            mode,
            accuracy: r.accuracy,
            loss: r.loss,
            delta: r.accuracy - baseline_accuracy,
        });
    }
    Ok(Evaluation {
        baseline_accuracy,
        baseline_loss,
        modes: out,
    })
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_uses_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn score_counts_argmax_hits() {
        let z = Tensor::new([2, 3], vec![0.0, 5.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let (c, l) = score(&z, &[1, 2]);
        assert_eq!(c, 1);
        assert!(l > 0.0);
    }
}
