use rand::Rng;
use serde::Serialize;

use super::config::{
    AttachSpec, ConvRow, Family, ModelConfig, FEATURE_WIDTH, RESNET_BLOCKS, RESNET_STEM, VGG_CONVS,
};
use crate::engine::{Mode, NodeId, Padding, ParamId, ParamStore, Scalar, Tape, Tensor};
use crate::error::{Error, Result};

/// Running-average weight of the newest batch statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    BatchNorm,
    Relu,
    Concat,
    Add,
    GlobalPool,
    Dense,
    Softmax,
}

/// Descriptive record of one layer, in forward order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub stride: usize,
    /// Conv: `[kh, kw, in, out]`; dense: `[in, out]`; otherwise empty.
    pub filter_shape: Vec<usize>,
    pub block: Option<usize>,
    /// Ordinal among the base network's convs, in forward order.
    pub conv_ordinal: Option<usize>,
    pub branch: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Base,
    Reflective,
}

#[derive(Clone, Debug)]
pub struct BnState<T: Scalar> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// conv -> batchnorm -> relu
#[derive(Clone, Debug)]
struct ConvUnit {
    weight: ParamId,
    gamma: ParamId,
    beta: ParamId,
    bn: usize,
    stride: usize,
    out_ch: usize,
}

#[derive(Clone, Debug)]
struct ResBlock {
    index: usize,
    a: ConvUnit,
    b: ConvUnit,
    shortcut: ConvUnit,
}

#[derive(Clone, Debug)]
enum Stage {
    Conv { ordinal: usize, unit: ConvUnit },
    Block(ResBlock),
}

#[derive(Clone, Debug)]
struct Branch {
    attach: AttachSpec,
    convs: [ConvUnit; 2],
}

#[derive(Clone, Debug)]
struct Head {
    weight: ParamId,
    bias: ParamId,
}

/// Node ids produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: NodeId,
    /// `(layer, node)` for every layer an explanation can be taken from.
    pub taps: Vec<(usize, NodeId)>,
    bn_nodes: Vec<(usize, NodeId)>,
}

impl ForwardOutput {
    pub fn tap(&self, layer: usize) -> Option<NodeId> {
        self.taps.iter().find(|(l, _)| *l == layer).map(|(_, n)| *n)
    }
}

/// A base classifier or its reflective extension.
#[derive(Clone, Debug)]
pub struct ClassifierModel<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
    bn: Vec<BnState<T>>,
    stages: Vec<Stage>,
    branches: Vec<Branch>,
    head: Head,
    layers: Vec<LayerSpec>,
}

struct Builder<'r, T: Scalar, R: Rng> {
    params: ParamStore<T>,
    bn: Vec<BnState<T>>,
    layers: Vec<LayerSpec>,
    next_ordinal: usize,
    rng: &'r mut R,
}

impl<'r, T: Scalar, R: Rng> Builder<'r, T, R> {
    fn unit(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        block: Option<usize>,
        branch: bool,
    ) -> ConvUnit {
        let fan_in = in_ch * kernel * kernel;
        let w = Tensor::randn(
            [out_ch, in_ch, kernel, kernel],
            (2.0 / fan_in as f64).sqrt(),
            self.rng,
        );
        let weight = self.params.add(format!("{name}.weight"), w, false);
        let gamma = self.params.add(
            format!("{name}.bn.gamma"),
            Tensor::full([out_ch], T::one()),
            false,
        );
        let beta = self
            .params
            .add(format!("{name}.bn.beta"), Tensor::zeros([out_ch]), false);
        self.bn.push(BnState {
            name: format!("{name}.bn"),
            mean: vec![T::zero(); out_ch],
            var: vec![T::one(); out_ch],
        });
        let conv_ordinal = if branch {
            None
        } else {
            self.next_ordinal += 1;
            Some(self.next_ordinal - 1)
        };
        for (kind, suffix) in [
            (LayerKind::Conv, ""),
            (LayerKind::BatchNorm, ".bn"),
            (LayerKind::Relu, ".relu"),
        ] {
            self.layers.push(LayerSpec {
                name: format!("{name}{suffix}"),
                kind,
                stride: if kind == LayerKind::Conv { stride } else { 1 },
                filter_shape: if kind == LayerKind::Conv {
                    vec![kernel, kernel, in_ch, out_ch]
                } else {
                    Vec::new()
                },
                block,
                conv_ordinal: if kind == LayerKind::Conv {
                    conv_ordinal
                } else {
                    None
                },
                branch,
            });
        }
        ConvUnit {
            weight,
            gamma,
            beta,
            bn: self.bn.len() - 1,
            stride,
            out_ch,
        }
    }

    fn marker(&mut self, name: String, kind: LayerKind, block: Option<usize>) {
        self.layers.push(LayerSpec {
            name,
            kind,
            stride: 1,
            filter_shape: Vec::new(),
            block,
            conv_ordinal: None,
            branch: false,
        });
    }

    /// Builds the branch for `attach` whose output is concatenated onto `k` channels.
    fn branch(&mut self, attach: &AttachSpec, k: usize) -> Result<Branch> {
        if !k.is_multiple_of(attach.depth) {
            return Err(Error::Config(format!(
                "depth {} does not divide the {k} channels of layer {}",
                attach.depth, attach.layer
            )));
        }
        let [w0, w1] = attach.branch_widths();
        let name = format!("branch{}", attach.layer);
        let c0 = self.unit(&format!("{name}.conv0"), attach.depth, w0, 3, 1, None, true);
        let c1 = self.unit(&format!("{name}.conv1"), w0, w1, 3, 1, None, true);
        self.marker(format!("{name}.concat"), LayerKind::Concat, None);
        Ok(Branch {
            attach: attach.clone(),
            convs: [c0, c1],
        })
    }
}

impl<T: Scalar> ClassifierModel<T> {
    /// Builds the network described by `config` with fan-in scaled normal initialization.
    pub fn build<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: ParamStore::new(),
            bn: Vec::new(),
            layers: Vec::new(),
            next_ordinal: 0,
            rng,
        };
        let attach_at = |layer: usize| config.explanation_attach.iter().find(|a| a.layer == layer);
        let n_layers = match config.family {
            Family::Vgg => VGG_CONVS.len(),
            Family::Resnet => RESNET_BLOCKS.len(),
        };
        for a in &config.explanation_attach {
            let valid = match config.family {
                Family::Vgg => a.layer < n_layers,
                Family::Resnet => (1..=n_layers).contains(&a.layer),
            };
            if !valid {
                return Err(Error::Config(format!(
                    "layer {} does not exist in the {} variant",
                    a.layer, config.family
                )));
            }
        }

        let mut stages = Vec::new();
        let mut branches = Vec::new();
        let mut extra_in = 0usize;
        let ch = |c: usize| config.channels(c);
        match config.family {
            Family::Vgg => {
                for (ordinal, row) in VGG_CONVS.iter().enumerate() {
                    let in_ch = extra_in
                        + if ordinal == 0 {
                            config.in_channels
                        } else {
                            ch(row.in_ch)
                        };
                    let out_ch = ch(row.out_ch);
                    let unit = b.unit(
                        &format!("conv{ordinal}"),
                        in_ch,
                        out_ch,
                        row.kernel,
                        row.stride,
                        None,
                        false,
                    );
                    stages.push(Stage::Conv { ordinal, unit });
                    extra_in = 0;
                    if let Some(a) = attach_at(ordinal) {
                        let br = b.branch(a, out_ch)?;
                        extra_in = br.convs[1].out_ch;
                        branches.push(br);
                    }
                }
            }
            Family::Resnet => {
                let stem = RESNET_STEM;
                let unit = b.unit(
                    "stem",
                    config.in_channels,
                    ch(stem.out_ch),
                    stem.kernel,
                    stem.stride,
                    None,
                    false,
                );
                stages.push(Stage::Conv { ordinal: 0, unit });
                for (i, [ra, rb]) in RESNET_BLOCKS.iter().enumerate() {
                    let index = i + 1;
                    let name = format!("block{index}");
                    let a = b.unit(
                        &format!("{name}.conv_a"),
                        ch(ra.in_ch),
                        ch(ra.out_ch),
                        ra.kernel,
                        ra.stride,
                        Some(index),
                        false,
                    );
                    let mut extra = 0;
                    if let Some(spec) = attach_at(index) {
                        let br = b.branch(spec, a.out_ch)?;
                        extra = br.convs[1].out_ch;
                        branches.push(br);
                    }
                    let bu = b.unit(
                        &format!("{name}.conv_b"),
                        ch(rb.in_ch) + extra,
                        ch(rb.out_ch),
                        rb.kernel,
                        rb.stride,
                        Some(index),
                        false,
                    );
                    let shortcut = b.unit(
                        &format!("{name}.shortcut"),
                        ch(ra.in_ch),
                        ch(rb.out_ch),
                        1,
                        ra.stride * rb.stride,
                        Some(index),
                        false,
                    );
                    b.marker(format!("{name}.add"), LayerKind::Add, Some(index));
                    stages.push(Stage::Block(ResBlock {
                        index,
                        a,
                        b: bu,
                        shortcut,
                    }));
                }
            }
        }
        let features = ch(FEATURE_WIDTH) + extra_in;
        b.marker("pool".into(), LayerKind::GlobalPool, None);
        let w = Tensor::randn(
            [features, config.n_classes],
            (2.0 / features as f64).sqrt(),
            b.rng,
        );
        let weight = b.params.add("head.weight", w, true);
        let bias = b
            .params
            .add("head.bias", Tensor::zeros([config.n_classes]), false);
        b.layers.push(LayerSpec {
            name: "head".into(),
            kind: LayerKind::Dense,
            stride: 1,
            filter_shape: vec![features, config.n_classes],
            block: None,
            conv_ordinal: None,
            branch: false,
        });
        b.marker("softmax".into(), LayerKind::Softmax, None);

        // Branch order follows the forward pass; keep it aligned with the config order
        // so explanations can be passed in config order.
        let mut ordered = Vec::with_capacity(branches.len());
        for a in &config.explanation_attach {
            let pos = branches
                .iter()
                .position(|br: &Branch| br.attach.layer == a.layer)
                .unwrap();
            ordered.push(branches.remove(pos));
        }

        Ok(Self {
            config: config.clone(),
            params: b.params,
            bn: b.bn,
            stages,
            branches: ordered,
            head: Head { weight, bias },
            layers: b.layers,
        })
    }

    /// Reflective network whose every base parameter and running statistic is copied from
    /// `base`. Branch parameters and the new input channels of the conv (or dense layer)
    /// after each attach point keep their fresh initialization.
    pub fn reflective_from<R: Rng>(
        base: &Self,
        attach: Vec<AttachSpec>,
        rng: &mut R,
    ) -> Result<Self> {
        if base.role() != Role::Base {
            return Err(Error::InvalidArgument(
                "reflective_from needs a base model".into(),
            ));
        }
        let config = base.config.clone().with_attach(attach);
        let mut model = Self::build(&config, rng)?;
        for p in base.params.iter() {
            let id = model.params.id(&p.name).ok_or_else(|| {
                Error::Shape(format!(
                    "base parameter {} missing from reflective model",
                    p.name
                ))
            })?;
            let target = &mut model.params.get_mut(id).value;
            copy_leading(&p.name, &p.value, target)?;
        }
        for st in &base.bn {
            let dst = model
                .bn
                .iter_mut()
                .find(|s| s.name == st.name)
                .ok_or_else(|| Error::Shape(format!("batchnorm {} missing", st.name)))?;
            dst.mean.clone_from(&st.mean);
            dst.var.clone_from(&st.var);
        }
        Ok(model)
    }

    /// Like [`Self::reflective_from`], but the weights reading the branch channels start at
    /// zero, so the network computes exactly the base function while its branches stay
    /// trainable.
    pub fn reflective_identity_from<R: Rng>(
        base: &Self,
        attach: Vec<AttachSpec>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::reflective_from(base, attach, rng)?;
        for p in base.params.iter() {
            let id = model
                .params
                .id(&p.name)
                .expect("checked by reflective_from");
            let target = &mut model.params.get_mut(id).value;
            if target.shape() != p.value.shape() {
                let mut fresh = Tensor::zeros(target.shape().to_vec());
                copy_leading(&p.name, &p.value, &mut fresh)?;
                *target = fresh;
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn role(&self) -> Role {
        if self.branches.is_empty() {
            Role::Base
        } else {
            Role::Reflective
        }
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BnState<T>] {
        &self.bn
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn attach_points(&self) -> Vec<AttachSpec> {
        self.branches.iter().map(|b| b.attach.clone()).collect()
    }

    /// Layers an explanation can be taken from.
    pub fn explainable_layers(&self) -> Vec<usize> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                Stage::Conv { ordinal, .. } if self.config.family == Family::Vgg => Some(*ordinal),
                Stage::Block(b) => Some(b.index),
                _ => None,
            })
            .collect()
    }

    /// `(channels, height, width)` of the activations at `layer` for an `h x w` input.
    pub fn tap_shape(&self, layer: usize, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let (mut h, mut w) = (h, w);
        let down = |x: usize, s: usize| x.div_ceil(s);
        for stage in &self.stages {
            match stage {
                Stage::Conv { ordinal, unit } => {
                    h = down(h, unit.stride);
                    w = down(w, unit.stride);
                    if self.config.family == Family::Vgg && *ordinal == layer {
                        return Ok((unit.out_ch, h, w));
                    }
                }
                Stage::Block(b) => {
                    let (ha, wa) = (down(h, b.a.stride), down(w, b.a.stride));
                    if b.index == layer {
                        return Ok((b.a.out_ch, ha, wa));
                    }
                    h = down(ha, b.b.stride);
                    w = down(wa, b.b.stride);
                }
            }
        }
        Err(Error::InvalidArgument(format!(
            "layer {layer} does not exist in the {} variant",
            self.config.family
        )))
    }

    /// `[d, u, v]` of the explanation each attach point expects, in config order.
    pub fn explanation_shapes(&self, h: usize, w: usize) -> Result<Vec<[usize; 3]>> {
        self.branches
            .iter()
            .map(|b| {
                let (_, u, v) = self.tap_shape(b.attach.layer, h, w)?;
                Ok([b.attach.depth, u, v])
            })
            .collect()
    }

    fn run_unit(
        &self,
        tape: &mut Tape<T>,
        x: NodeId,
        u: &ConvUnit,
        bn_nodes: &mut Vec<(usize, NodeId)>,
    ) -> Result<NodeId> {
        let w = tape.param(&self.params, u.weight);
        let c = tape.conv2d(x, w, u.stride, Padding::Same)?;
        let g = tape.param(&self.params, u.gamma);
        let b = tape.param(&self.params, u.beta);
        let st = &self.bn[u.bn];
        let n = tape.batchnorm(c, g, b, &st.mean, &st.var)?;
        bn_nodes.push((u.bn, n));
        tape.relu(n)
    }

    fn attach(
        &self,
        tape: &mut Tape<T>,
        layer: usize,
        x: NodeId,
        explanations: &[NodeId],
        bn_nodes: &mut Vec<(usize, NodeId)>,
    ) -> Result<NodeId> {
        match self.branches.iter().position(|b| b.attach.layer == layer) {
            Some(i) => {
                let br = &self.branches[i];
                let e = explanations[i];
                let shape = tape.value(e).shape();
                if shape.len() != 4 || shape[1] != br.attach.depth {
                    return Err(Error::Shape(format!(
                        "explanation for layer {layer} must be [N,{},u,v], got {shape:?}",
                        br.attach.depth
                    )));
                }
                let h = self.run_unit(tape, e, &br.convs[0], bn_nodes)?;
                let h = self.run_unit(tape, h, &br.convs[1], bn_nodes)?;
                tape.concat_channels(x, h)
            }
            None => Ok(x),
        }
    }

    /// Records the forward pass on `tape`. `explanations` holds one `[N,d,u,v]` node per
    /// attach point in config order and must be empty for a base model.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        input: NodeId,
        explanations: &[NodeId],
    ) -> Result<ForwardOutput> {
        if explanations.len() != self.branches.len() {
            return Err(Error::InvalidArgument(match self.role() {
                Role::Base => "a base model takes no explanations".to_string(),
                Role::Reflective => format!(
                    "expected {} explanations, got {}",
                    self.branches.len(),
                    explanations.len()
                ),
            }));
        }
        let mut bn_nodes = Vec::new();
        let mut taps = Vec::new();
        let mut x = input;
        for stage in &self.stages {
            match stage {
                Stage::Conv { ordinal, unit } => {
                    x = self.run_unit(tape, x, unit, &mut bn_nodes)?;
                    if self.config.family == Family::Vgg {
                        taps.push((*ordinal, x));
                        x = self.attach(tape, *ordinal, x, explanations, &mut bn_nodes)?;
                    }
                }
                Stage::Block(b) => {
                    let a = self.run_unit(tape, x, &b.a, &mut bn_nodes)?;
                    taps.push((b.index, a));
                    let a = self.attach(tape, b.index, a, explanations, &mut bn_nodes)?;
                    let out = self.run_unit(tape, a, &b.b, &mut bn_nodes)?;
                    let sc = self.run_unit(tape, x, &b.shortcut, &mut bn_nodes)?;
                    x = tape.add(out, sc)?;
                }
            }
        }
        let pooled = tape.global_avg_pool(x)?;
        let w = tape.param(&self.params, self.head.weight);
        let b = tape.param(&self.params, self.head.bias);
        let logits = tape.dense(pooled, w, b)?;
        Ok(ForwardOutput {
            logits,
            taps,
            bn_nodes,
        })
    }

    /// Folds the batch statistics of a train-mode pass into the running statistics.
    pub fn update_running_stats(&mut self, tape: &Tape<T>, out: &ForwardOutput) {
        let mom = T::of(BN_MOMENTUM);
        for &(bn, node) in &out.bn_nodes {
            if let Some((mean, var)) = tape.batch_stats(node) {
                let x = tape.value(node);
                let m = x.numel() / x.dim(1);
                let unbias = if m > 1 {
                    T::of(m as f64 / (m - 1) as f64)
                } else {
                    T::one()
                };
                let st = &mut self.bn[bn];
                for c in 0..mean.len() {
                    st.mean[c] = (T::one() - mom) * st.mean[c] + mom * mean[c];
                    st.var[c] = (T::one() - mom) * st.var[c] + mom * var[c] * unbias;
                }
            }
        }
    }

    /// Eval-mode logits for a `[N,C,H,W]` batch.
    pub fn logits(
        &self,
        input: &Tensor<T>,
        explanations: Option<&[Tensor<T>]>,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new(Mode::Eval);
        let x = tape.input(input.clone());
        let ex: Vec<NodeId> = match explanations {
            Some(list) => list.iter().map(|e| tape.input(e.clone())).collect(),
            None => Vec::new(),
        };
        if explanations.is_some() && self.role() == Role::Base {
            return Err(Error::InvalidArgument(
                "a base model takes no explanations".into(),
            ));
        }
        let out = self.forward(&mut tape, x, &ex)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Sets the last batchnorm affine of every branch to zero so branches emit exact zeros.
    pub fn silence_branches(&mut self) {
        let ids: Vec<(ParamId, ParamId)> = self
            .branches
            .iter()
            .map(|b| (b.convs[1].gamma, b.convs[1].beta))
            .collect();
        for (g, b) in ids {
            for id in [g, b] {
                self.params
                    .get_mut(id)
                    .value
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = T::zero());
            }
        }
    }

    /// Parameters followed by running statistics, as checkpoint entries.
    pub fn to_entries(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for st in &self.bn {
            let n = st.mean.len();
            out.push((
                format!("{}.running_mean", st.name),
                Tensor::new([n], st.mean.clone()).unwrap(),
            ));
            out.push((
                format!("{}.running_var", st.name),
                Tensor::new([n], st.var.clone()).unwrap(),
            ));
        }
        out
    }

    /// Loads every entry written by [`ClassifierModel::to_entries`] for the same config.
    pub fn load_entries<U: Scalar>(&mut self, entries: &[(String, Tensor<U>)]) -> Result<()> {
        let expected = self.params.len() + 2 * self.bn.len();
        if entries.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint has {} entries, model needs {expected}",
                entries.len()
            )));
        }
        for (name, t) in entries {
            let t: Tensor<T> = t.cast();
            if let Some(id) = self.params.id(name) {
                self.params.set_value(id, t)?;
                continue;
            }
            let (bn_name, field) = name
                .rsplit_once('.')
                .ok_or_else(|| Error::Format(format!("unknown checkpoint entry {name}")))?;
            let st = self
                .bn
                .iter_mut()
                .find(|s| s.name == bn_name)
                .ok_or_else(|| Error::Format(format!("unknown checkpoint entry {name}")))?;
            let dst = match field {
                "running_mean" => &mut st.mean,
                "running_var" => &mut st.var,
                _ => return Err(Error::Format(format!("unknown checkpoint entry {name}"))),
            };
            if dst.len() != t.numel() {
                return Err(Error::Shape(format!(
                    "{name}: length {} vs {}",
                    t.numel(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ClassifierModel<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            params.add(p.name.clone(), p.value.cast(), p.weight_decay);
        }
        ClassifierModel {
            config: self.config.clone(),
            params,
            bn: self
                .bn
                .iter()
                .map(|s| BnState {
                    name: s.name.clone(),
                    mean: s.mean.iter().map(|&v| U::of(v.as_f64())).collect(),
                    var: s.var.iter().map(|&v| U::of(v.as_f64())).collect(),
                })
                .collect(),
            stages: self.stages.clone(),
            branches: self.branches.clone(),
            head: self.head.clone(),
            layers: self.layers.clone(),
        }
    }

    /// Expected conv filter shapes `[kh, kw, in, out]` of the base path, derived from the
    /// reference tables and the width multiplier.
    pub fn reference_conv_shapes(config: &ModelConfig) -> Vec<[usize; 4]> {
        let ch = |c| config.channels(c);
        let shape = |r: &ConvRow, in_ch: usize| [r.kernel, r.kernel, in_ch, ch(r.out_ch)];
        match config.family {
            Family::Vgg => VGG_CONVS
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    shape(
                        r,
                        if i == 0 {
                            config.in_channels
                        } else {
                            ch(r.in_ch)
                        },
                    )
                })
                .collect(),
            Family::Resnet => {
                let mut v = vec![shape(&RESNET_STEM, config.in_channels)];
                for [a, b] in RESNET_BLOCKS.iter() {
                    v.push(shape(a, ch(a.in_ch)));
                    v.push(shape(b, ch(b.in_ch)));
                    v.push([1, 1, ch(a.in_ch), ch(b.out_ch)]);
                }
                v
            }
        }
    }
}

fn copy_leading<T: Scalar>(name: &str, src: &Tensor<T>, dst: &mut Tensor<T>) -> Result<()> {
    if src.shape() == dst.shape() {
        dst.data_mut().copy_from_slice(src.data());
        return Ok(());
    }
    let (s, d) = (src.shape(), dst.shape().to_vec());
    let widened =
        s.len() == d.len() && s.len() >= 2 && s[0] == d[0] && s[2..] == d[2..] && d[1] > s[1];
    let dense_widened = s.len() == 2 && d.len() == 2 && s[1] == d[1] && d[0] > s[0];
    if dense_widened {
        // [features, classes]: old features are the leading rows.
        dst.data_mut()[..src.numel()].copy_from_slice(src.data());
        return Ok(());
    }
    if !widened {
        return Err(Error::Shape(format!(
            "cannot initialize {name} {d:?} from base shape {s:?}"
        )));
    }
    let inner: usize = s[2..].iter().product();
    for o in 0..s[0] {
        let src_row = &src.data()[o * s[1] * inner..(o + 1) * s[1] * inner];
        dst.data_mut()[o * d[1] * inner..o * d[1] * inner + s[1] * inner].copy_from_slice(src_row);
    }
    Ok(())
}
