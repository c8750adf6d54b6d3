//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod gradcases;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reflectnet::arch::ClassifierModel;
use reflectnet::engine::{Mode, NodeId, ParamId, Tape, Tensor};
use reflectnet::explainer::{FeatureMaps, ImportanceWeights};

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub max_rel: f64,
    pub checked: usize,
}

impl FdReport {
    pub fn merge(self, other: FdReport) -> FdReport {
        FdReport {
            max_rel: self.max_rel.max(other.max_rel),
            checked: self.checked + other.checked,
        }
    }

    pub fn ok(&self) -> bool {
        self.checked > 0 && self.max_rel < FD_TOL
    }
}

/// Central differences at `coords`, using the five-point stencil
/// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h` with `h = FD_STEP`.
/// `eval(coord, delta)` evaluates the function with coordinate `coord` shifted by
/// `delta`; it must leave the input unchanged afterwards.
pub fn fd_check(
    coords: &[usize],
    analytic: &[f64],
    mut eval: impl FnMut(usize, f64) -> f64,
) -> FdReport {
    let mut rep = FdReport::default();
    for &c in coords {
        let numeric = central_difference(|delta| eval(c, delta));
        rep.max_rel = rep.max_rel.max(rel_err(analytic[c], numeric));
        rep.checked += 1;
    }
    rep
}

/// Five-point central difference of `f` at 0 with step `FD_STEP`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = FD_STEP;
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

/// At most `k` distinct coordinates of `0..n` in random order.
pub fn sample_coords(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    all.truncate(k);
    all
}

// Perturbed evaluations replay the ReLU gates of the unperturbed pass, so finite
// differences measure the linear piece the analytic gradient belongs to even when a
// step of FD_STEP would cross a kink somewhere in the network.

/// Train-mode cross-entropy of a model on a batch. With `gates`, every ReLU reuses the
/// given pattern.
pub fn model_loss(
    model: &ClassifierModel<f64>,
    x: &Tensor<f64>,
    explanations: &[Tensor<f64>],
    labels: &[usize],
    gates: Option<Vec<Vec<bool>>>,
) -> (f64, Tape<f64>) {
    let mut tape = match gates {
        Some(g) => Tape::with_relu_gates(Mode::Train, g),
        None => Tape::new(Mode::Train),
    };
    let xi = tape.input(x.clone());
    let ex: Vec<_> = explanations.iter().map(|e| tape.input(e.clone())).collect();
    let out = model.forward(&mut tape, xi, &ex).unwrap();
    let loss = tape.softmax_cross_entropy(out.logits, labels).unwrap();
    (tape.value(loss).data()[0], tape)
}

/// Compares autodiff parameter gradients of a whole model against central differences
/// on `per_param` sampled coordinates of every parameter tensor.
pub fn model_gradcheck(
    model: &mut ClassifierModel<f64>,
    x: &Tensor<f64>,
    explanations: &[Tensor<f64>],
    labels: &[usize],
    per_param: usize,
) -> FdReport {
    let mut tape = Tape::new(Mode::Train);
    let xi = tape.input(x.clone());
    let ex: Vec<_> = explanations.iter().map(|e| tape.input(e.clone())).collect();
    let out = model.forward(&mut tape, xi, &ex).unwrap();
    let loss = tape.softmax_cross_entropy(out.logits, labels).unwrap();
    let gates = tape.relu_gates();
    let grads = tape.backward(loss, None).unwrap();

    let mut report = FdReport::default();
    for p in 0..model.params().len() {
        let id = ParamId(p);
        let analytic: Vec<f64> = grads.param(id).unwrap().data().to_vec();
        let coords = sample_coords(analytic.len(), per_param, p as u64);
        let rep = fd_check(&coords, &analytic, |c, delta| {
            let orig = model.params().value(id).data()[c];
            model.params_mut().get_mut(id).value.data_mut()[c] = orig + delta;
            let f = model_loss(model, x, explanations, labels, Some(gates.clone())).0;
            model.params_mut().get_mut(id).value.data_mut()[c] = orig;
            f
        });
        report = report.merge(rep);
    }
    report
}

/// Gradient check of an arbitrary recorded graph with respect to each of `inputs`.
/// `build` receives one gradient-tracking leaf per input and returns a scalar node.
pub fn primitive_gradcheck(
    inputs: &[Tensor<f64>],
    mode: Mode,
    build: impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
    per_input: usize,
) -> FdReport {
    let eval = |xs: &[Tensor<f64>], gates: Option<Vec<Vec<bool>>>| {
        let mut tape = match gates {
            Some(g) => Tape::with_relu_gates(mode, g),
            None => Tape::new(mode),
        };
        let ids: Vec<_> = xs.iter().map(|t| tape.input_with_grad(t.clone())).collect();
        let root = build(&mut tape, &ids);
        (tape, ids, root)
    };
    let (tape, ids, root) = eval(inputs, None);
    let gates = tape.relu_gates();
    let grads = tape.backward(root, None).unwrap();
    let mut report = FdReport::default();
    for (i, id) in ids.iter().enumerate() {
        let analytic: Vec<f64> = grads.node(*id).unwrap().data().to_vec();
        let coords = sample_coords(analytic.len(), per_input, 17 + i as u64);
        let rep = fd_check(&coords, &analytic, |c, delta| {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[c] += delta;
            let (t, _, r) = eval(&xs, Some(gates.clone()));
            t.value(r).data()[0]
        });
        report = report.merge(rep);
    }
    report
}

/// Independent oracle: ReLU of the all-channel weighted sum, accumulated channel by
/// channel in index order.
pub fn gradcam_oracle(maps: &FeatureMaps<f64>, w: &ImportanceWeights<f64>) -> Vec<f64> {
    let k = maps.maps.dim(0);
    let hw = maps.maps.numel() / k;
    let mut out = vec![0.0; hw];
    for (kk, &alpha) in w.alpha.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += alpha * maps.maps.data()[kk * hw + j];
        }
    }
    out.into_iter().map(|v| v.max(0.0)).collect()
}
