//! Finite-difference cases for every layer primitive and for whole toy models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reflectnet::arch::{AttachSpec, ClassifierModel, Family, ModelConfig};
use reflectnet::engine::{Mode, Padding, Tensor};

use super::{model_gradcheck, primitive_gradcheck, FdReport};

const LABELS: [usize; 8] = [0, 3, 1, 4, 2, 2, 0, 1];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed))
}

pub fn conv2d(stride: usize, padding: Padding) -> FdReport {
    let x = randn(&[2, 3, 8, 8], 1);
    let w = randn(&[4, 3, 3, 3], 2);
    let probe = randn(&[2, 4, 8, 8], 3);
    primitive_gradcheck(
        &[x, w],
        Mode::Train,
        |t, ids| {
            let y = t.conv2d(ids[0], ids[1], stride, padding).unwrap();
            let shape = t.value(y).shape().to_vec();
            let n: usize = shape.iter().product();
            let coeffs = Tensor::new(shape, probe.data()[..n].to_vec()).unwrap();
            t.weighted_sum(y, &coeffs).unwrap()
        },
        400,
    )
}

pub fn conv2d_sum_of_outputs() -> FdReport {
    primitive_gradcheck(
        &[randn(&[2, 3, 8, 8], 4), randn(&[5, 3, 3, 3], 5)],
        Mode::Train,
        |t, ids| {
            let y = t.conv2d(ids[0], ids[1], 1, Padding::Same).unwrap();
            let ones = Tensor::full(t.value(y).shape().to_vec(), 1.0);
            t.weighted_sum(y, &ones).unwrap()
        },
        200,
    )
}

pub fn conv1x1_strided() -> FdReport {
    primitive_gradcheck(
        &[randn(&[2, 4, 5, 5], 6), randn(&[3, 4, 1, 1], 7)],
        Mode::Train,
        |t, ids| {
            let y = t.conv2d(ids[0], ids[1], 2, Padding::Same).unwrap();
            let c = randn(t.value(y).shape(), 8);
            t.weighted_sum(y, &c).unwrap()
        },
        200,
    )
}

pub fn batchnorm(mode: Mode) -> FdReport {
    let gamma = Tensor::new([2], vec![1.3, -0.7]).unwrap();
    let beta = Tensor::new([2], vec![0.2, 0.5]).unwrap();
    let probe = randn(&[4, 2, 3, 3], 10);
    primitive_gradcheck(
        &[randn(&[4, 2, 3, 3], 9), gamma, beta],
        mode,
        |t, ids| {
            let y = t
                .batchnorm(ids[0], ids[1], ids[2], &[0.1, -0.2], &[1.5, 0.8])
                .unwrap();
            t.weighted_sum(y, &probe).unwrap()
        },
        100,
    )
}

pub fn relu() -> FdReport {
    let probe = randn(&[3, 7], 12);
    primitive_gradcheck(
        &[randn(&[3, 7], 11)],
        Mode::Train,
        |t, ids| {
            let y = t.relu(ids[0]).unwrap();
            t.weighted_sum(y, &probe).unwrap()
        },
        21,
    )
}

pub fn dense() -> FdReport {
    let probe = randn(&[3, 4], 13);
    primitive_gradcheck(
        &[randn(&[3, 5], 14), randn(&[5, 4], 15), randn(&[4], 16)],
        Mode::Train,
        |t, ids| {
            let y = t.dense(ids[0], ids[1], ids[2]).unwrap();
            t.weighted_sum(y, &probe).unwrap()
        },
        50,
    )
}

pub fn softmax_cross_entropy() -> FdReport {
    primitive_gradcheck(
        &[randn(&[4, 6], 17)],
        Mode::Train,
        |t, ids| t.softmax_cross_entropy(ids[0], &[0, 5, 2, 2]).unwrap(),
        24,
    )
}

pub fn pool_concat_add() -> FdReport {
    let probe = randn(&[2, 5], 19);
    primitive_gradcheck(
        &[
            randn(&[2, 2, 3, 3], 20),
            randn(&[2, 3, 3, 3], 21),
            randn(&[2, 5, 3, 3], 22),
        ],
        Mode::Train,
        |t, ids| {
            let c = t.concat_channels(ids[0], ids[1]).unwrap();
            let s = t.add(c, ids[2]).unwrap();
            let p = t.global_avg_pool(s).unwrap();
            t.weighted_sum(p, &probe).unwrap()
        },
        60,
    )
}

pub fn two_layer_net() -> FdReport {
    primitive_gradcheck(
        &[
            randn(&[3, 2, 4, 4], 23),
            randn(&[4, 2, 3, 3], 24),
            randn(&[4, 3], 25),
            randn(&[3], 26),
        ],
        Mode::Train,
        |t, ids| {
            let h = t.conv2d(ids[0], ids[1], 1, Padding::Same).unwrap();
            let h = t.relu(h).unwrap();
            let h = t.global_avg_pool(h).unwrap();
            let z = t.dense(h, ids[2], ids[3]).unwrap();
            t.softmax_cross_entropy(z, &[1, 0, 2]).unwrap()
        },
        100,
    )
}

pub fn vgg_model() -> FdReport {
    let cfg = ModelConfig::new(Family::Vgg, 5, 0.25);
    let mut model: ClassifierModel<f64> = ClassifierModel::build(&cfg, &mut rng(31)).unwrap();
    model_gradcheck(&mut model, &randn(&[8, 3, 8, 8], 32), &[], &LABELS, 6)
}

pub fn resnet_model() -> FdReport {
    let cfg = ModelConfig::new(Family::Resnet, 5, 0.25);
    let mut model: ClassifierModel<f64> = ClassifierModel::build(&cfg, &mut rng(33)).unwrap();
    model_gradcheck(&mut model, &randn(&[8, 3, 8, 8], 34), &[], &LABELS, 4)
}

pub fn reflective_model() -> FdReport {
    let cfg = ModelConfig::new(Family::Vgg, 5, 0.25).with_attach(vec![AttachSpec::new(2, 16)]);
    let mut model: ClassifierModel<f64> = ClassifierModel::build(&cfg, &mut rng(35)).unwrap();
    let e = randn(&[8, 16, 1, 1], 36).map(f64::abs);
    model_gradcheck(&mut model, &randn(&[8, 3, 8, 8], 37), &[e], &LABELS, 6)
}

/// Every case, named.
pub fn all() -> Vec<(&'static str, FdReport)> {
    vec![
        ("conv2d stride 1 same", conv2d(1, Padding::Same)),
        ("conv2d stride 2 same", conv2d(2, Padding::Same)),
        ("conv2d stride 1 valid", conv2d(1, Padding::Valid)),
        ("conv2d output sum", conv2d_sum_of_outputs()),
        ("conv 1x1 stride 2", conv1x1_strided()),
        ("batchnorm train", batchnorm(Mode::Train)),
        ("batchnorm eval", batchnorm(Mode::Eval)),
        ("relu", relu()),
        ("dense", dense()),
        ("softmax cross-entropy", softmax_cross_entropy()),
        ("global pool, concat, add", pool_concat_add()),
        ("conv-relu-pool-dense net", two_layer_net()),
        ("vgg toy model", vgg_model()),
        ("resnet toy model", resnet_model()),
        ("reflective vgg toy model", reflective_model()),
    ]
}
