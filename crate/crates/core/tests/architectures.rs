use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reflectnet::arch::{
    build_reflective_variant, build_resnet_variant, build_vgg_variant, AttachSpec, ClassifierModel,
    Family, LayerKind, ModelConfig, Role,
};
use reflectnet::engine::{Mode, Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn input(n: usize, hw: usize, seed: u64) -> Tensor<f32> {
    Tensor::randn(vec![n, 3, hw, hw], 1.0, &mut rng(seed))
}

fn conv_shapes(model: &ClassifierModel<f32>) -> Vec<[usize; 4]> {
    model
        .layers()
        .iter()
        .filter(|l| l.kind == LayerKind::Conv && !l.branch)
        .map(|l| l.filter_shape.clone().try_into().unwrap())
        .collect()
}

#[test]
fn shape_audit_matches_reference_tables_at_every_width() {
    for family in [Family::Vgg, Family::Resnet] {
        for w in [0.1, 0.25, 0.5, 1.0] {
            let cfg = ModelConfig::new(family, 10, w);
            let model: ClassifierModel<f32> = ClassifierModel::build(&cfg, &mut rng(0)).unwrap();
            assert_eq!(
                conv_shapes(&model),
                ClassifierModel::<f32>::reference_conv_shapes(&cfg)
            );
        }
    }
}

#[test]
fn full_width_vgg_filters() {
    let cfg = ModelConfig::new(Family::Vgg, 10, 1.0);
    let model: ClassifierModel<f32> = build_vgg_variant(&cfg, &mut rng(1)).unwrap();
    let expected = [
        [3, 3, 3, 32],
        [3, 3, 32, 64],
        [3, 3, 64, 128],
        [3, 3, 128, 256],
        [3, 3, 256, 512],
        [3, 3, 512, 512],
    ];
    assert_eq!(conv_shapes(&model), expected);
    assert!(model
        .layers()
        .iter()
        .filter(|l| l.kind == LayerKind::Conv)
        .all(|l| l.stride == 2));
    let head = model
        .layers()
        .iter()
        .find(|l| l.kind == LayerKind::Dense)
        .unwrap();
    assert_eq!(head.filter_shape, vec![512, 10]);
}

#[test]
fn layer_list_has_increasing_ordinals_and_one_softmax() {
    for family in [Family::Vgg, Family::Resnet] {
        let cfg = ModelConfig::new(family, 10, 0.25).with_attach(vec![AttachSpec::new(2, 8)]);
        let model: ClassifierModel<f32> = ClassifierModel::build(&cfg, &mut rng(2)).unwrap();
        let ords: Vec<usize> = model
            .layers()
            .iter()
            .filter_map(|l| l.conv_ordinal)
            .collect();
        assert!(ords.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ords[0], 0);
        let softmax = model
            .layers()
            .iter()
            .filter(|l| l.kind == LayerKind::Softmax)
            .count();
        assert_eq!(softmax, 1);
        assert_eq!(model.layers().last().unwrap().kind, LayerKind::Softmax);
    }
}

#[test]
fn width_quarter_stem_has_eight_channels() {
    let cfg = ModelConfig::new(Family::Vgg, 10, 0.25);
    let model: ClassifierModel<f32> = ClassifierModel::build(&cfg, &mut rng(3)).unwrap();
    assert_eq!(conv_shapes(&model)[0], [3, 3, 3, 8]);
}

#[test]
fn vgg_logits_have_one_entry_per_class() {
    let cfg = ModelConfig::new(Family::Vgg, 10, 1.0);
    let model: ClassifierModel<f32> = ClassifierModel::build(&cfg, &mut rng(4)).unwrap();
    let z = model.logits(&input(2, 32, 5), None).unwrap();
    assert_eq!(z.shape(), &[2, 10]);
}

#[test]
fn vgg_fourth_conv_is_a_valid_layer_and_its_spatial_walk() {
    let cfg = ModelConfig::new(Family::Vgg, 10, 1.0);
    let model: ClassifierModel<f32> = ClassifierModel::build(&cfg, &mut rng(6)).unwrap();
    assert!(model.explainable_layers().contains(&3));
    // 32 -> 16 -> 8 -> 4 -> 2 after four stride-2 convs.
    assert_eq!(model.tap_shape(3, 32, 32).unwrap(), (256, 2, 2));
    assert_eq!(model.tap_shape(2, 32, 32).unwrap(), (128, 4, 4));
    assert!(model.tap_shape(6, 32, 32).is_err());
}

#[test]
fn resnet_block_two_first_conv_has_stride_two() {
    let cfg = ModelConfig::new(Family::Resnet, 10, 1.0);
    let model: ClassifierModel<f32> = build_resnet_variant(&cfg, &mut rng(7)).unwrap();
    let conv_a = model
        .layers()
        .iter()
        .find(|l| l.name == "block2.conv_a")
        .unwrap();
    assert_eq!(conv_a.stride, 2);
    assert_eq!(conv_a.filter_shape, vec![3, 3, 128, 128]);
    let stem = model.layers().iter().find(|l| l.name == "stem").unwrap();
    assert_eq!(
        (stem.stride, stem.filter_shape.clone()),
        (1, vec![3, 3, 3, 64])
    );
    let sc = model
        .layers()
        .iter()
        .find(|l| l.name == "block1.shortcut")
        .unwrap();
    assert_eq!(sc.filter_shape, vec![1, 1, 64, 128]);
    // Layer 3 names the first conv of block 3.
    assert_eq!(model.tap_shape(3, 32, 32).unwrap(), (256, 8, 8));
}

#[test]
fn family_specific_builders_reject_the_other_family() {
    let cfg = ModelConfig::new(Family::Resnet, 10, 0.25);
    assert!(build_vgg_variant::<f32, _>(&cfg, &mut rng(8)).is_err());
    let cfg = ModelConfig::new(Family::Vgg, 10, 0.25);
    assert!(build_resnet_variant::<f32, _>(&cfg, &mut rng(8)).is_err());
}

#[test]
fn zeroed_block_convs_leave_only_the_shortcut() {
    let cfg = ModelConfig::new(Family::Resnet, 4, 0.25);
    let mut model: ClassifierModel<f64> = ClassifierModel::build(&cfg, &mut rng(9)).unwrap();
    for name in ["block1.conv_a.weight", "block1.conv_b.weight"] {
        let id = model.params().id(name).unwrap();
        model.params_mut().get_mut(id).value.data_mut().fill(0.0);
    }
    let x: Tensor<f64> = Tensor::randn(vec![2, 3, 8, 8], 1.0, &mut rng(10));
    let mut tape = Tape::new(Mode::Eval);
    let xi = tape.input(x.clone());
    let out = model.forward(&mut tape, xi, &[]).unwrap();
    assert!(tape
        .value(out.tap(1).unwrap())
        .data()
        .iter()
        .all(|&v| v == 0.0));
    let before = tape.value(out.logits).clone();

    // With conv_b zeroed (and BN at identity), the residual path is constant, so
    // changing conv_a cannot reach the output: only the projection carries the input.
    let id = model.params().id("block1.conv_a.weight").unwrap();
    let shape = model.params().value(id).shape().to_vec();
    model.params_mut().get_mut(id).value = Tensor::randn(shape, 1.0, &mut rng(11));
    assert_eq!(model.logits(&x, None).unwrap().data(), before.data());
}

#[test]
fn reflective_concat_widens_next_layer() {
    let base = ModelConfig::new(Family::Vgg, 10, 1.0);
    let model: ClassifierModel<f32> =
        build_reflective_variant(&base, vec![AttachSpec::new(4, 16)], &mut rng(11)).unwrap();
    assert_eq!(model.role(), Role::Reflective);
    let next = model.layers().iter().find(|l| l.name == "conv5").unwrap();
    assert_eq!(next.filter_shape, vec![3, 3, 512 + 16, 512]);
    let b0 = model
        .layers()
        .iter()
        .find(|l| l.name == "branch4.conv0")
        .unwrap();
    assert_eq!(
        (b0.stride, b0.filter_shape.clone()),
        (1, vec![3, 3, 16, 16])
    );

    let mut tape = Tape::new(Mode::Eval);
    let x = tape.input(input(2, 32, 12));
    let e = tape.input(Tensor::zeros([2, 16, 1, 1]));
    let out = model.forward(&mut tape, x, &[e]).unwrap();
    assert_eq!(tape.value(out.logits).shape(), &[2, 10]);
    assert_eq!(model.explanation_shapes(32, 32).unwrap(), vec![[16, 1, 1]]);
}

#[test]
fn resnet_attach_widens_second_conv_of_block() {
    let base = ModelConfig::new(Family::Resnet, 10, 1.0);
    let model: ClassifierModel<f32> =
        build_reflective_variant(&base, vec![AttachSpec::new(3, 16)], &mut rng(13)).unwrap();
    let b = model
        .layers()
        .iter()
        .find(|l| l.name == "block3.conv_b")
        .unwrap();
    assert_eq!(b.filter_shape, vec![3, 3, 256 + 16, 512]);
}

#[test]
fn depth_must_divide_layer_channels_and_layer_must_exist() {
    let base = ModelConfig::new(Family::Vgg, 10, 0.25);
    // Conv ordinal 2 has 32 channels at width 0.25.
    assert!(
        build_reflective_variant::<f32, _>(&base, vec![AttachSpec::new(2, 5)], &mut rng(14))
            .is_err()
    );
    assert!(
        build_reflective_variant::<f32, _>(&base, vec![AttachSpec::new(9, 4)], &mut rng(14))
            .is_err()
    );
    let rn = ModelConfig::new(Family::Resnet, 10, 0.25);
    assert!(
        build_reflective_variant::<f32, _>(&rn, vec![AttachSpec::new(0, 4)], &mut rng(14)).is_err()
    );
    assert!(build_reflective_variant::<f32, _>(&base, vec![], &mut rng(14)).is_err());
}

#[test]
fn silenced_branch_with_zero_explanation_matches_base() {
    for family in [Family::Vgg, Family::Resnet] {
        let cfg = ModelConfig::new(family, 10, 0.25);
        let base: ClassifierModel<f64> = ClassifierModel::build(&cfg, &mut rng(15)).unwrap();
        let mut refl =
            ClassifierModel::reflective_from(&base, vec![AttachSpec::new(2, 8)], &mut rng(16))
                .unwrap();
        refl.silence_branches();
        let x: Tensor<f64> = Tensor::randn(vec![3, 3, 16, 16], 1.0, &mut rng(17));
        let shapes = refl.explanation_shapes(16, 16).unwrap();
        let [d, u, v] = shapes[0];
        let zero = Tensor::zeros([3, d, u, v]);
        let a = base.logits(&x, None).unwrap();
        let b = refl.logits(&x, Some(&[zero])).unwrap();
        assert_eq!(a.data(), b.data(), "{family}");

        // Taps of the base path are also untouched.
        let mut t1 = Tape::new(Mode::Eval);
        let xi = t1.input(x.clone());
        let o1 = base.forward(&mut t1, xi, &[]).unwrap();
        let mut t2 = Tape::new(Mode::Eval);
        let xi = t2.input(x.clone());
        let e = t2.input(Tensor::zeros([3, d, u, v]));
        let o2 = refl.forward(&mut t2, xi, &[e]).unwrap();
        for l in base.explainable_layers() {
            assert_eq!(
                t1.value(o1.tap(l).unwrap()).data(),
                t2.value(o2.tap(l).unwrap()).data()
            );
        }
    }
}

#[test]
fn different_explanations_change_reflective_logits() {
    let cfg = ModelConfig::new(Family::Vgg, 10, 0.25).with_attach(vec![AttachSpec::new(2, 8)]);
    let model: ClassifierModel<f32> = ClassifierModel::build(&cfg, &mut rng(18)).unwrap();
    let x = input(2, 32, 19);
    let [d, u, v] = model.explanation_shapes(32, 32).unwrap()[0];
    let e1 = Tensor::uniform(vec![2, d, u, v], 0.0, 1.0, &mut rng(20));
    let e2 = Tensor::uniform(vec![2, d, u, v], 0.0, 1.0, &mut rng(21));
    let a = model.logits(&x, Some(&[e1])).unwrap();
    let b = model.logits(&x, Some(&[e2])).unwrap();
    assert!(a.max_abs_diff(&b) > 0.0);
}

#[test]
fn explanation_count_is_enforced() {
    let cfg = ModelConfig::new(Family::Vgg, 10, 0.25);
    let base: ClassifierModel<f32> = ClassifierModel::build(&cfg, &mut rng(22)).unwrap();
    let x = input(1, 32, 23);
    assert!(base.logits(&x, Some(&[])).is_err());
    let refl =
        ClassifierModel::reflective_from(&base, vec![AttachSpec::new(2, 8)], &mut rng(24)).unwrap();
    assert!(refl.logits(&x, None).is_err());
}

#[test]
fn base_logits_unaffected_by_reflective_sibling() {
    let cfg = ModelConfig::new(Family::Resnet, 10, 0.25);
    let base: ClassifierModel<f32> = ClassifierModel::build(&cfg, &mut rng(25)).unwrap();
    let x = input(4, 16, 26);
    let before = base.logits(&x, None).unwrap();
    let _sibling =
        ClassifierModel::reflective_from(&base, vec![AttachSpec::new(3, 8)], &mut rng(27)).unwrap();
    assert_eq!(before.data(), base.logits(&x, None).unwrap().data());
}

#[test]
fn base_batch_of_128_gives_128_rows() {
    let cfg = ModelConfig::new(Family::Vgg, 10, 0.25);
    let base: ClassifierModel<f32> = ClassifierModel::build(&cfg, &mut rng(28)).unwrap();
    assert_eq!(
        base.logits(&input(128, 32, 29), None).unwrap().shape(),
        &[128, 10]
    );
}

#[test]
fn two_attach_points_create_two_branches() {
    let cfg = ModelConfig::new(Family::Vgg, 10, 0.25)
        .with_attach(vec![AttachSpec::new(3, 8), AttachSpec::new(2, 8)]);
    let model: ClassifierModel<f32> = ClassifierModel::build(&cfg, &mut rng(30)).unwrap();
    let names: Vec<&str> = model
        .layers()
        .iter()
        .filter(|l| l.kind == LayerKind::Concat)
        .map(|l| l.name.as_str())
        .collect();
    assert_eq!(names, ["branch2.concat", "branch3.concat"]);
    // Explanations are passed in config order.
    assert_eq!(
        model.explanation_shapes(32, 32).unwrap(),
        vec![[8, 2, 2], [8, 4, 4]]
    );
    let x = input(2, 32, 31);
    let e3 = Tensor::zeros([2, 8, 2, 2]);
    let e2 = Tensor::zeros([2, 8, 4, 4]);
    assert!(model.logits(&x, Some(&[e3.clone(), e2.clone()])).is_ok());
    assert!(model.logits(&x, Some(&[e2, e3])).is_err());
}

#[test]
fn reflective_from_copies_every_base_parameter() {
    let cfg = ModelConfig::new(Family::Resnet, 10, 0.25);
    let base: ClassifierModel<f32> = ClassifierModel::build(&cfg, &mut rng(32)).unwrap();
    let refl =
        ClassifierModel::reflective_from(&base, vec![AttachSpec::new(2, 8)], &mut rng(33)).unwrap();
    for p in base.params().iter() {
        let q = refl.params().by_name(&p.name).unwrap();
        if q.value.shape() == p.value.shape() {
            assert_eq!(q.value.data(), p.value.data(), "{}", p.name);
        } else {
            // Widened input slice: leading channels are the base weights.
            let s = p.value.shape();
            let inner: usize = s[2..].iter().product();
            let d1 = q.value.shape()[1];
            for o in 0..s[0] {
                assert_eq!(
                    &q.value.data()[o * d1 * inner..o * d1 * inner + s[1] * inner],
                    &p.value.data()[o * s[1] * inner..(o + 1) * s[1] * inner]
                );
            }
        }
    }
    assert_eq!(refl.params().len(), base.params().len() + 6);
}
