//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node holding its output and whatever it needs for the
//! backward rule. Nodes are only ever appended, so node ids are a topological order and
//! a backward sweep is a single reverse walk.

use std::collections::BTreeMap;

use super::param::{ParamId, ParamStore};
use super::tensor::{matmul, Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Added to the variance before taking the inverse square root.
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm.
    Train,
    /// Running statistics in batchnorm; every sample is processed independently.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2`, so the output extent is `ceil(extent / stride)`.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        /// Per-channel batch mean and biased variance, train mode only.
        batch_stats: Option<(Vec<T>, Vec<T>)>,
    },
    Relu {
        input: NodeId,
        gate: Vec<bool>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    WeightedSum {
        input: NodeId,
        coeffs: Vec<T>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward computation.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    mode: Mode,
    frozen_gates: Option<std::vec::IntoIter<Vec<bool>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            frozen_gates: None,
        }
    }

    /// A tape whose ReLUs pass exactly the entries given by `gates` (one mask per ReLU,
    /// in recording order) instead of the positive ones. Re-running a forward pass with
    /// the gates of an earlier pass evaluates the same linear piece of every ReLU.
    pub fn with_relu_gates(mode: Mode, gates: Vec<Vec<bool>>) -> Self {
        Self {
            frozen_gates: Some(gates.into_iter()),
            ..Self::new(mode)
        }
    }

    /// Masks of the entries each ReLU let through, in recording order.
    pub fn relu_gates(&self) -> Vec<Vec<bool>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Relu { gate, .. } => Some(gate.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn check(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is reported by [`Tape::backward`].
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// 2-D convolution without bias. `input` is `[N,C,H,W]`, `weight` is `[F,C,kh,kw]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let x = &self.check(input)?.value;
        let wt = &self.check(weight)?.value;
        if x.ndim() != 4 || wt.ndim() != 4 {
            return shape_err(format!(
                "conv2d expects 4-d input and weight, got {:?} and {:?}",
                x.shape(),
                wt.shape()
            ));
        }
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (f, wc, kh, kw) = (wt.dim(0), wt.dim(1), wt.dim(2), wt.dim(3));
        if wc != c {
            return shape_err(format!(
                "conv2d: input has {c} channels but weight {:?} expects {wc}",
                wt.shape()
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "conv2d stride must be positive".into(),
            ));
        }
        let pad = match padding {
            Padding::Same => {
                if kh != kw || kh % 2 == 0 {
                    return shape_err(format!(
                        "same padding needs an odd square kernel, got {kh}x{kw}"
                    ));
                }
                (kh - 1) / 2
            }
            Padding::Valid => 0,
        };
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return shape_err(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}"
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let cols = im2col(x.data(), &geom);
        let np = n * geom.out_plane();
        let mut tmp = vec![T::zero(); f * np];
        matmul(
            f,
            geom.col_rows(),
            np,
            wt.data(),
            false,
            &cols,
            false,
            &mut tmp,
            false,
        );
        let mut out = vec![T::zero(); n * f * geom.out_plane()];
        let p = geom.out_plane();
        for fi in 0..f {
            for ni in 0..n {
                let src = &tmp[fi * np + ni * p..fi * np + (ni + 1) * p];
                out[(ni * f + fi) * p..(ni * f + fi + 1) * p].copy_from_slice(src);
            }
        }
        let rg = self.needs(&[input, weight]);
        let value = Tensor::new([n, f, ho, wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Batch normalization over every axis except axis 1. In train mode the batch
    /// statistics are used and kept for [`Tape::batch_stats`]; in eval mode the
    /// supplied running statistics are used.
    pub fn batchnorm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[T],
        running_var: &[T],
    ) -> Result<NodeId> {
        let x = &self.check(input)?.value;
        if x.ndim() < 2 {
            return shape_err(format!(
                "batchnorm expects at least 2 axes, got {:?}",
                x.shape()
            ));
        }
        let n = x.dim(0);
        let c = x.dim(1);
        let s: usize = x.shape()[2..].iter().product();
        let m = n * s;
        if m == 0 {
            return Err(Error::InvalidArgument("batchnorm on an empty batch".into()));
        }
        let g = self.check(gamma)?.value.data();
        let b = self.check(beta)?.value.data();
        if g.len() != c || b.len() != c || running_mean.len() != c || running_var.len() != c {
            return shape_err(format!(
                "batchnorm: {c} channels but affine/stat length mismatch"
            ));
        }
        let xd = x.data();
        let eps = T::of(BN_EPS);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut stats = None;
        match self.mode {
            Mode::Train => {
                let mut means = vec![T::zero(); c];
                let mut vars = vec![T::zero(); c];
                let mf = T::of(m as f64);
                for ci in 0..c {
                    let mut sum = T::zero();
                    for ni in 0..n {
                        let base = (ni * c + ci) * s;
                        sum += xd[base..base + s].iter().copied().sum::<T>();
                    }
                    let mean = sum / mf;
                    let mut sq = T::zero();
                    for ni in 0..n {
                        let base = (ni * c + ci) * s;
                        for &v in &xd[base..base + s] {
                            let d = v - mean;
                            sq += d * d;
                        }
                    }
                    let var = sq / mf;
                    means[ci] = mean;
                    vars[ci] = var;
                    inv_std[ci] = T::one() / (var + eps).sqrt();
                }
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * s;
                        for k in base..base + s {
                            xhat[k] = (xd[k] - means[ci]) * inv_std[ci];
                            out[k] = g[ci] * xhat[k] + b[ci];
                        }
                    }
                }
                stats = Some((means, vars));
            }
            Mode::Eval => {
                for ci in 0..c {
                    inv_std[ci] = T::one() / (running_var[ci] + eps).sqrt();
                }
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * s;
                        for k in base..base + s {
                            xhat[k] = (xd[k] - running_mean[ci]) * inv_std[ci];
                            out[k] = g[ci] * xhat[k] + b[ci];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.needs(&[input, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: stats,
            },
            rg,
        ))
    }

    /// Per-channel batch mean and biased variance of a train-mode batchnorm node.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&[T], &[T])> {
        match &self.nodes.get(id.0)?.op {
            Op::BatchNorm {
                batch_stats: Some((m, v)),
                ..
            } => Some((m, v)),
            _ => None,
        }
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.check(input)?;
        let frozen = match self.frozen_gates.as_mut() {
            Some(gates) => Some(gates.next().ok_or_else(|| {
                Error::InvalidArgument("more ReLUs recorded than frozen gates".into())
            })?),
            None => None,
        };
        let x = &self.nodes[input.0].value;
        let gate: Vec<bool> = match frozen {
            Some(gate) => {
                if gate.len() != x.numel() {
                    return shape_err(format!(
                        "frozen gate has {} entries, ReLU input has {}",
                        gate.len(),
                        x.numel()
                    ));
                }
                gate
            }
            None => x.data().iter().map(|&v| v > T::zero()).collect(),
        };
        let data = x
            .data()
            .iter()
            .zip(&gate)
            .map(|(&v, &on)| if on { v } else { T::zero() })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Relu { input, gate }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let x = &self.check(a)?.value;
        let y = &self.check(b)?.value;
        if x.shape() != y.shape() {
            return shape_err(format!("add: {:?} vs {:?}", x.shape(), y.shape()));
        }
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| p + q)
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Channel-wise concatenation of `[N,C1,H,W]` and `[N,C2,H,W]`; `a`'s channels come first.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let x = &self.check(a)?.value;
        let y = &self.check(b)?.value;
        if x.ndim() != 4
            || y.ndim() != 4
            || x.dim(0) != y.dim(0)
            || x.dim(2) != y.dim(2)
            || x.dim(3) != y.dim(3)
        {
            return shape_err(format!(
                "concat: spatial/batch mismatch {:?} vs {:?}",
                x.shape(),
                y.shape()
            ));
        }
        let (n, c1, c2) = (x.dim(0), x.dim(1), y.dim(1));
        let s = x.dim(2) * x.dim(3);
        let mut data = Vec::with_capacity(n * (c1 + c2) * s);
        for ni in 0..n {
            data.extend_from_slice(&x.data()[ni * c1 * s..(ni + 1) * c1 * s]);
            data.extend_from_slice(&y.data()[ni * c2 * s..(ni + 1) * c2 * s]);
        }
        let value = Tensor::new([n, c1 + c2, x.dim(2), x.dim(3)], data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let x = &self.check(input)?.value;
        if x.ndim() != 4 {
            return shape_err(format!(
                "global_avg_pool expects 4 axes, got {:?}",
                x.shape()
            ));
        }
        let (n, c) = (x.dim(0), x.dim(1));
        let s = x.dim(2) * x.dim(3);
        let inv = T::one() / T::of(s as f64);
        let data = x
            .data()
            .chunks(s)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new([n, c], data)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::GlobalAvgPool { input }, rg))
    }

    /// Affine map `[N,D] x [D,M] + [M]`.
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = &self.check(input)?.value;
        let wt = &self.check(weight)?.value;
        let b = &self.check(bias)?.value;
        if x.ndim() != 2 || wt.ndim() != 2 || x.dim(1) != wt.dim(0) || b.numel() != wt.dim(1) {
            return shape_err(format!(
                "dense: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                wt.shape(),
                b.shape()
            ));
        }
        let (n, d, m) = (x.dim(0), x.dim(1), wt.dim(1));
        let mut out = vec![T::zero(); n * m];
        for row in out.chunks_mut(m) {
            row.copy_from_slice(b.data());
        }
        matmul(n, d, m, x.data(), false, wt.data(), false, &mut out, true);
        let value = Tensor::new([n, m], out)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`. Output shape `[1]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let z = &self.check(logits)?.value;
        if z.ndim() != 2 || z.dim(0) != labels.len() {
            return shape_err(format!(
                "softmax_cross_entropy: logits {:?} with {} labels",
                z.shape(),
                labels.len()
            ));
        }
        let (n, k) = (z.dim(0), z.dim(1));
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let probs = softmax_rows(z.data(), k);
        let mut loss = T::zero();
        for (row, &l) in labels.iter().enumerate() {
            let zr = &z.data()[row * k..(row + 1) * k];
            let mx = zr.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + zr.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            loss += lse - zr[l];
        }
        loss /= T::of(n as f64);
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// `sum(coeffs * input)`, a scalar. Useful as a generic probe for gradient checks.
    pub fn weighted_sum(&mut self, input: NodeId, coeffs: &Tensor<T>) -> Result<NodeId> {
        let x = &self.check(input)?.value;
        if x.shape() != coeffs.shape() {
            return shape_err(format!(
                "weighted_sum: {:?} vs {:?}",
                x.shape(),
                coeffs.shape()
            ));
        }
        let s = x
            .data()
            .iter()
            .zip(coeffs.data())
            .map(|(&a, &b)| a * b)
            .sum();
        let rg = self.needs(&[input]);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                input,
                coeffs: coeffs.data().to_vec(),
            },
            rg,
        ))
    }

    /// Backpropagates from a scalar node with seed 1.
    pub fn backward(&self, root: NodeId, stop_at: Option<NodeId>) -> Result<Gradients<T>> {
        let node = self.check(root)?;
        if node.value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar root, node {} has shape {:?}",
                root.0,
                node.value.shape()
            )));
        }
        self.backward_with_seed(
            root,
            Tensor::full(node.value.shape().to_vec(), T::one()),
            stop_at,
        )
    }

    /// Backpropagates `seed` (shaped like `root`) through the tape. With `stop_at`, the sweep
    /// ends at that node: its gradient is reported, nothing recorded before it is visited.
    pub fn backward_with_seed(
        &self,
        root: NodeId,
        seed: Tensor<T>,
        stop_at: Option<NodeId>,
    ) -> Result<Gradients<T>> {
        let root_node = self.check(root)?;
        if root_node.value.shape() != seed.shape() {
            return shape_err(format!(
                "seed shape {:?} differs from root shape {:?}",
                seed.shape(),
                root_node.value.shape()
            ));
        }
        let low = match stop_at {
            Some(s) => {
                self.check(s)?;
                if s > root {
                    return Err(Error::InvalidArgument(format!(
                        "stop_at node {} was recorded after root {}",
                        s.0, root.0
                    )));
                }
                s.0
            }
            None => 0,
        };
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed.into_data());

        for i in (low..=root.0).rev() {
            if Some(NodeId(i)) == stop_at {
                break;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut node_grads = Vec::with_capacity(self.nodes.len());
        let mut params: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            let t = match g {
                Some(g) => Some(Tensor::new(self.nodes[i].value.shape().to_vec(), g)?),
                None => None,
            };
            if let (Op::Param(pid), Some(t)) = (&self.nodes[i].op, &t) {
                match params.get_mut(pid) {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(t.data())
                        .for_each(|(a, &b)| *a += b),
                    None => {
                        params.insert(*pid, t.clone());
                    }
                }
            }
            node_grads.push(t);
        }
        Ok(Gradients { node_grads, params })
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Relu { input, gate } => {
                if wants(*input) {
                    let dx = gate
                        .iter()
                        .zip(g)
                        .map(|(&on, &gv)| if on { gv } else { T::zero() })
                        .collect();
                    accumulate(grads, *input, dx);
                }
            }
            Op::Add { a, b } => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Concat { a, b } => {
                let x = &self.nodes[a.0].value;
                let y = &self.nodes[b.0].value;
                let (n, c1, c2) = (x.dim(0), x.dim(1), y.dim(1));
                let s = x.dim(2) * x.dim(3);
                let (mut da, mut db) =
                    (Vec::with_capacity(x.numel()), Vec::with_capacity(y.numel()));
                for ni in 0..n {
                    let base = ni * (c1 + c2) * s;
                    da.extend_from_slice(&g[base..base + c1 * s]);
                    db.extend_from_slice(&g[base + c1 * s..base + (c1 + c2) * s]);
                }
                if wants(*a) {
                    accumulate(grads, *a, da);
                }
                if wants(*b) {
                    accumulate(grads, *b, db);
                }
            }
            Op::GlobalAvgPool { input } => {
                if wants(*input) {
                    let x = &self.nodes[input.0].value;
                    let s = x.dim(2) * x.dim(3);
                    let inv = T::one() / T::of(s as f64);
                    let mut dx = Vec::with_capacity(x.numel());
                    for &gv in g {
                        dx.extend(std::iter::repeat_n(gv * inv, s));
                    }
                    accumulate(grads, *input, dx);
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let x = &self.nodes[input.0].value;
                let wt = &self.nodes[weight.0].value;
                let (n, d, m) = (x.dim(0), x.dim(1), wt.dim(1));
                if wants(*input) {
                    let mut dx = vec![T::zero(); n * d];
                    matmul(n, m, d, g, false, wt.data(), true, &mut dx, false);
                    accumulate(grads, *input, dx);
                }
                if wants(*weight) {
                    let mut dw = vec![T::zero(); d * m];
                    matmul(d, n, m, x.data(), true, g, false, &mut dw, false);
                    accumulate(grads, *weight, dw);
                }
                if wants(*bias) {
                    let mut db = vec![T::zero(); m];
                    for row in g.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    accumulate(grads, *bias, db);
                }
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                if wants(*logits) {
                    let n = labels.len();
                    let k = probs.len() / n;
                    let scale = g[0] / T::of(n as f64);
                    let mut dz: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (row, &l) in labels.iter().enumerate() {
                        dz[row * k + l] -= scale;
                    }
                    accumulate(grads, *logits, dz);
                }
            }
            Op::WeightedSum { input, coeffs } => {
                if wants(*input) {
                    accumulate(grads, *input, coeffs.iter().map(|&c| c * g[0]).collect());
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let x = &self.nodes[input.0].value;
                let gam = self.nodes[gamma.0].value.data();
                let n = x.dim(0);
                let c = x.dim(1);
                let s: usize = x.shape()[2..].iter().product();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * s;
                        for k in base..base + s {
                            dgamma[ci] += g[k] * xhat[k];
                            dbeta[ci] += g[k];
                        }
                    }
                }
                if wants(*input) {
                    let mut dx = vec![T::zero(); x.numel()];
                    if batch_stats.is_some() {
                        let mf = T::of((n * s) as f64);
                        for ci in 0..c {
                            let k1 = gam[ci] * inv_std[ci] / mf;
                            for ni in 0..n {
                                let base = (ni * c + ci) * s;
                                for k in base..base + s {
                                    dx[k] = k1 * (mf * g[k] - dbeta[ci] - xhat[k] * dgamma[ci]);
                                }
                            }
                        }
                    } else {
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * s;
                                let k1 = gam[ci] * inv_std[ci];
                                for k in base..base + s {
                                    dx[k] = g[k] * k1;
                                }
                            }
                        }
                    }
                    accumulate(grads, *input, dx);
                }
                if wants(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if wants(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            Op::Conv2d {
                input,
                weight,
                geom,
                cols,
            } => {
                let p = geom.out_plane();
                let np = geom.n * p;
                let f = geom.f;
                // [N,F,P] -> [F, N*P]
                let mut gt = vec![T::zero(); f * np];
                for ni in 0..geom.n {
                    for fi in 0..f {
                        let src = &g[(ni * f + fi) * p..(ni * f + fi + 1) * p];
                        gt[fi * np + ni * p..fi * np + (ni + 1) * p].copy_from_slice(src);
                    }
                }
                let rows = geom.col_rows();
                if wants(*weight) {
                    let mut dw = vec![T::zero(); f * rows];
                    matmul(f, np, rows, &gt, false, cols, true, &mut dw, false);
                    accumulate(grads, *weight, dw);
                }
                if wants(*input) {
                    let wt = self.nodes[weight.0].value.data();
                    let mut dcols = vec![T::zero(); rows * np];
                    matmul(rows, f, np, wt, true, &gt, false, &mut dcols, false);
                    accumulate(grads, *input, col2im(&dcols, geom));
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: NodeId, contrib: Vec<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing
            .iter_mut()
            .zip(&contrib)
            .for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(contrib),
    }
}

/// Row-wise softmax of a `[rows, k]` buffer.
pub fn softmax_rows<T: Scalar>(z: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); z.len()];
    for (zr, pr) in z.chunks(k).zip(out.chunks_mut(k)) {
        let mx = zr.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (p, &v) in pr.iter_mut().zip(zr) {
            *p = (v - mx).exp();
            total += *p;
        }
        pr.iter_mut().for_each(|p| *p /= total);
    }
    out
}

/// `[C*kh*kw, N*Ho*Wo]` patch matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_plane();
    let np = g.n * p;
    let mut cols = vec![T::zero(); g.col_rows() * np];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst_row = &mut cols[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let plane = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let dst = &mut dst_row[n * p..(n + 1) * p];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[oy * g.wo + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_plane();
    let np = g.n * p;
    let mut x = vec![T::zero(); g.n * g.c * g.h * g.w];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src_row = &cols[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let plane = &mut x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    let src = &src_row[n * p..(n + 1) * p];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                plane[iy as usize * g.w + ix as usize] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Result of a backward sweep.
pub struct Gradients<T: Scalar> {
    node_grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a recorded node, if the sweep reached it.
    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.node_grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|t| t.is_finite())
    }
}
