mod common;

use common::gradcases;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reflectnet::arch::{ClassifierModel, Family, ModelConfig};
use reflectnet::engine::{Mode, Padding, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed))
}

#[test]
fn conv2d_matches_finite_differences() {
    for (stride, padding) in [(1, Padding::Same), (2, Padding::Same), (1, Padding::Valid)] {
        let rep = gradcases::conv2d(stride, padding);
        assert!(rep.ok(), "stride {stride} {padding:?}: {rep:?}");
    }
    let rep = gradcases::conv2d_sum_of_outputs();
    assert!(rep.ok(), "{rep:?}");
}

#[test]
fn one_by_one_conv_matches_finite_differences() {
    let rep = gradcases::conv1x1_strided();
    assert!(rep.ok(), "{rep:?}");
}

#[test]
fn batchnorm_train_and_eval_match_finite_differences() {
    for mode in [Mode::Train, Mode::Eval] {
        let rep = gradcases::batchnorm(mode);
        assert!(rep.ok(), "{mode:?}: {rep:?}");
    }
}

#[test]
fn relu_matches_finite_differences_on_its_active_pattern() {
    let rep = gradcases::relu();
    assert!(rep.ok(), "{rep:?}");
}

#[test]
fn dense_and_cross_entropy_match_finite_differences() {
    for rep in [gradcases::dense(), gradcases::softmax_cross_entropy()] {
        assert!(rep.ok(), "{rep:?}");
    }
}

#[test]
fn pooling_concat_and_add_match_finite_differences() {
    let rep = gradcases::pool_concat_add();
    assert!(rep.ok(), "{rep:?}");
}

#[test]
fn two_layer_toy_net_matches_finite_differences() {
    let rep = gradcases::two_layer_net();
    assert!(rep.ok(), "{rep:?}");
}

#[test]
fn full_vgg_toy_model_matches_finite_differences() {
    let rep = gradcases::vgg_model();
    assert!(rep.ok(), "{rep:?}");
}

#[test]
fn full_resnet_toy_model_matches_finite_differences() {
    let rep = gradcases::resnet_model();
    assert!(rep.ok(), "{rep:?}");
}

#[test]
fn reflective_toy_model_matches_finite_differences() {
    let rep = gradcases::reflective_model();
    assert!(rep.ok(), "{rep:?}");
}

#[test]
fn softmax_cross_entropy_gradient_is_softmax_minus_onehot_over_n() {
    let z = randn(&[2, 3], 18);
    let mut tape = reflectnet::engine::Tape::new(Mode::Train);
    let zi = tape.input_with_grad(z.clone());
    let l = tape.softmax_cross_entropy(zi, &[2, 0]).unwrap();
    let g = tape.backward(l, None).unwrap();
    let p = reflectnet::engine::softmax_rows(z.data(), 3);
    let mut expected = p.iter().map(|v| v / 2.0).collect::<Vec<_>>();
    expected[2] -= 0.5;
    expected[3] -= 0.5;
    for (a, b) in g.node(zi).unwrap().data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn stop_at_reports_activation_gradient_of_same_shape() {
    let cfg = ModelConfig::new(Family::Vgg, 10, 0.25);
    let model: ClassifierModel<f64> = ClassifierModel::build(&cfg, &mut rng(27)).unwrap();
    let mut tape = reflectnet::engine::Tape::new(Mode::Eval);
    let x = tape.input(randn(&[2, 3, 16, 16], 28));
    let out = model.forward(&mut tape, x, &[]).unwrap();
    let tap = out.tap(3).unwrap();
    let mut seed = Tensor::zeros([2, 10]);
    seed.data_mut()[4] = 1.0;
    seed.data_mut()[10 + 7] = 1.0;
    let g = tape
        .backward_with_seed(out.logits, seed, Some(tap))
        .unwrap();
    assert_eq!(g.node(tap).unwrap().shape(), tape.value(tap).shape());
    // Nothing below the stop node is visited.
    assert!(g.node(x).is_none());
}

#[test]
fn constant_loss_parameter_gets_zero_gradient() {
    let cfg = ModelConfig::new(Family::Vgg, 4, 0.25);
    let model: ClassifierModel<f64> = ClassifierModel::build(&cfg, &mut rng(29)).unwrap();
    let mut tape = reflectnet::engine::Tape::new(Mode::Train);
    let x = tape.input(randn(&[2, 3, 8, 8], 30));
    let out = model.forward(&mut tape, x, &[]).unwrap();
    let extra = tape.input_with_grad(Tensor::full([1], 3.0));
    let loss = tape.softmax_cross_entropy(out.logits, &[0, 1]).unwrap();
    let g = tape.backward(loss, None).unwrap();
    assert!(g.node(extra).is_none());
    // Bias of the head is reached; the unused leaf is not.
    assert!(g.param(model.params().id("head.bias").unwrap()).is_some());
}
