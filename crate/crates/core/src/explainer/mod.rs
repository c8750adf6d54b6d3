//! Class-discriminative multi-channel explanations from a frozen base classifier.
//!
//! For class `c` and feature maps `A` (`K x u x v`) at layer `L`, the importance of map
//! `k` is the spatial mean of `dy^c/dA^k`, where `y^c` is the pre-softmax score. The
//! `K` maps are split into `d` contiguous groups of `K/d`; channel `i` of the
//! explanation is `ReLU(sum_{k in group i} alpha_k A^k)`. With `d = 1` this is the
//! Grad-CAM map.

mod cache;
mod image;

pub use cache::{CacheKey, ExplanationCache};
pub use image::{min_max_normalize, upsample_bilinear};

use rand::Rng;

use crate::arch::{ClassifierModel, Role};
use crate::engine::{Mode, Scalar, Tape, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::seed;

/// Post-ReLU activations `[K,u,v]` of one sample at `layer`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps<T: Scalar> {
    pub layer: usize,
    pub maps: Tensor<T>,
}

impl<T: Scalar> FeatureMaps<T> {
    pub fn channels(&self) -> usize {
        self.maps.dim(0)
    }
}

/// `alpha[k] = (1/Z) sum_ij dy^c/dA^k_ij` with `Z = u v`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceWeights<T: Scalar> {
    pub class: usize,
    pub alpha: Vec<T>,
    pub z: usize,
}

/// A `[d,u,v]` explanation. `scale` is the global max the data was divided by, or 1 if
/// the explanation has not been normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation<T: Scalar> {
    pub data: Tensor<T>,
    /// `None` for noise.
    pub class: Option<usize>,
    /// `None` for noise.
    pub layer: Option<usize>,
    pub depth: usize,
    pub scale: T,
}

/// Feature maps, their gradients and the logits from one batched evaluation.
#[derive(Clone, Debug)]
pub struct GradCamPass<T: Scalar> {
    pub logits: Tensor<T>,
    /// Per requested layer: `(layer, activations [N,K,u,v], dy^c/dA [N,K,u,v])`.
    pub layers: Vec<(usize, Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> GradCamPass<T> {
    fn find(&self, layer: usize) -> Result<&(usize, Tensor<T>, Tensor<T>)> {
        self.layers
            .iter()
            .find(|(l, _, _)| *l == layer)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} was not captured")))
    }

    pub fn feature_maps(&self, layer: usize, sample: usize) -> Result<FeatureMaps<T>> {
        let (_, a, _) = self.find(layer)?;
        Ok(FeatureMaps {
            layer,
            maps: a.slice0(sample),
        })
    }

    pub fn importance(
        &self,
        layer: usize,
        sample: usize,
        class: usize,
    ) -> Result<ImportanceWeights<T>> {
        let (_, _, g) = self.find(layer)?;
        Ok(importance_from_gradient(&g.slice0(sample), class))
    }
}

fn require_base<T: Scalar>(model: &ClassifierModel<T>) -> Result<()> {
    if model.role() != Role::Base {
        return Err(Error::InvalidArgument(
            "explanations are generated by a base classifier".into(),
        ));
    }
    Ok(())
}

/// Evaluation-mode forward pass on `input` `[N,C,H,W]` and a backward pass from the
/// pre-softmax score of `classes[n]` for each sample `n`, stopped at the earliest of
/// `layers`. Samples do not interact in evaluation mode, so each sample's gradient is
/// that of its own score.
pub fn gradcam_pass<T: Scalar>(
    model: &ClassifierModel<T>,
    input: &Tensor<T>,
    classes: &[usize],
    layers: &[usize],
) -> Result<GradCamPass<T>> {
    require_base(model)?;
    let n = input.dim(0);
    if classes.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} classes for a batch of {n}",
            classes.len()
        )));
    }
    if layers.is_empty() {
        return Err(Error::InvalidArgument("no layer requested".into()));
    }
    let n_classes = model.n_classes();
    if let Some(&c) = classes.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "class {c} out of range 0..{n_classes}"
        )));
    }
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.input(input.clone());
    let out = model.forward(&mut tape, x, &[])?;
    let taps = layers
        .iter()
        .map(|&l| {
            out.tap(l).ok_or_else(|| {
                Error::InvalidArgument(format!("layer {l} does not exist in this model"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut seed = Tensor::zeros([n, n_classes]);
    for (i, &c) in classes.iter().enumerate() {
        seed.data_mut()[i * n_classes + c] = T::one();
    }
    let earliest = *taps.iter().min().unwrap();
    let grads = tape.backward_with_seed(out.logits, seed, Some(earliest))?;
    let mut captured = Vec::with_capacity(layers.len());
    for (&l, &tap) in layers.iter().zip(&taps) {
        let a = tape.value(tap).clone();
        let g = match grads.node(tap) {
            Some(g) => g.clone(),
            None => Tensor::zeros(a.shape().to_vec()),
        };
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of the class score at layer {l}"
            )));
        }
        captured.push((l, a, g));
    }
    Ok(GradCamPass {
        logits: tape.value(out.logits).clone(),
        layers: captured,
    })
}

/// Feature maps of every sample of `input` at `layer`, in evaluation mode.
pub fn capture_feature_maps<T: Scalar>(
    model: &ClassifierModel<T>,
    input: &Tensor<T>,
    layer: usize,
) -> Result<Vec<FeatureMaps<T>>> {
    require_base(model)?;
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.input(input.clone());
    let out = model.forward(&mut tape, x, &[])?;
    let tap = out.tap(layer).ok_or_else(|| {
        Error::InvalidArgument(format!("layer {layer} does not exist in this model"))
    })?;
    let a = tape.value(tap);
    Ok((0..a.dim(0))
        .map(|i| FeatureMaps {
            layer,
            maps: a.slice0(i),
        })
        .collect())
}

/// Importance weights of `classes[n]` for each sample `n` of `input` at `layer`.
pub fn neuron_importance<T: Scalar>(
    model: &ClassifierModel<T>,
    input: &Tensor<T>,
    classes: &[usize],
    layer: usize,
) -> Result<Vec<ImportanceWeights<T>>> {
    let pass = gradcam_pass(model, input, classes, &[layer])?;
    (0..classes.len())
        .map(|i| pass.importance(layer, i, classes[i]))
        .collect()
}

/// Spatial mean of a `[K,u,v]` gradient per channel.
pub fn importance_from_gradient<T: Scalar>(grad: &Tensor<T>, class: usize) -> ImportanceWeights<T> {
    let k = grad.dim(0);
    let z = grad.numel() / k;
    let zt = T::of(z as f64);
    let alpha = grad
        .data()
        .chunks(z)
        .map(|c| c.iter().fold(T::zero(), |s, &v| s + v) / zt)
        .collect();
    ImportanceWeights { class, alpha, z }
}

/// The `d` weighted group sums `[d,u,v]` before the outer ReLU.
pub fn group_maps<T: Scalar>(
    maps: &FeatureMaps<T>,
    weights: &ImportanceWeights<T>,
    d: usize,
) -> Result<Tensor<T>> {
    let k = maps.channels();
    if weights.alpha.len() != k {
        return shape_err(format!(
            "{} weights for {k} feature maps",
            weights.alpha.len()
        ));
    }
    if d == 0 || !k.is_multiple_of(d) {
        return Err(Error::InvalidArgument(format!(
            "depth {d} does not divide {k} feature maps"
        )));
    }
    let per = k / d;
    let hw = maps.maps.numel() / k;
    let a = maps.maps.data();
    let mut out = vec![T::zero(); d * hw];
    for (i, group) in out.chunks_mut(hw).enumerate() {
        for kk in i * per..(i + 1) * per {
            let w = weights.alpha[kk];
            for (o, &v) in group.iter_mut().zip(&a[kk * hw..(kk + 1) * hw]) {
                *o += w * v;
            }
        }
    }
    let mut shape = maps.maps.shape().to_vec();
    shape[0] = d;
    Tensor::new(shape, out)
}

/// `d`-channel explanation: the ReLU of each group sum. Not normalized.
pub fn aggregate_explanation<T: Scalar>(
    maps: &FeatureMaps<T>,
    weights: &ImportanceWeights<T>,
    d: usize,
) -> Result<Explanation<T>> {
    let g = group_maps(maps, weights, d)?;
    Ok(Explanation {
        data: g.map(|v| v.max(T::zero())),
        class: Some(weights.class),
        layer: Some(maps.layer),
        depth: d,
        scale: T::one(),
    })
}

/// Divides by the global max when it is positive; all-zero explanations pass through
/// with scale 0.
pub fn normalize_explanation<T: Scalar>(e: &Explanation<T>) -> Explanation<T> {
    let m = e.data.max();
    let (data, scale) = if m > T::zero() {
        (e.data.map(|v| v / m), m)
    } else {
        (e.data.clone(), T::zero())
    };
    Explanation {
        data,
        scale,
        ..e.clone()
    }
}

/// Grad-CAM map `[u,v]` (the single-channel aggregate) before upsampling.
pub fn gradcam_map<T: Scalar>(
    maps: &FeatureMaps<T>,
    weights: &ImportanceWeights<T>,
) -> Result<Tensor<T>> {
    let e = aggregate_explanation(maps, weights, 1)?;
    let (u, v) = (e.data.dim(1), e.data.dim(2));
    e.data.reshape([u, v])
}

/// Grad-CAM of class `class` for one `[C,H,W]` image at `layer`, bilinearly upsampled to
/// `target` and min-max normalized to `[0,1]`.
pub fn gradcam_heatmap<T: Scalar>(
    model: &ClassifierModel<T>,
    image: &Tensor<T>,
    class: usize,
    layer: usize,
    target: (usize, usize),
) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let batch = image.clone().reshape(shape)?;
    let pass = gradcam_pass(model, &batch, &[class], &[layer])?;
    let map = gradcam_map(
        &pass.feature_maps(layer, 0)?,
        &pass.importance(layer, 0, class)?,
    )?;
    Ok(min_max_normalize(&upsample_bilinear(&map, target)?))
}

/// Normalized `depth`-channel explanations of `classes[n]` for each sample at each of
/// `layers`, from one batched pass. Returns the logits and `out[layer_index][sample]`.
pub fn explain_batch<T: Scalar>(
    model: &ClassifierModel<T>,
    input: &Tensor<T>,
    classes: &[usize],
    layers: &[(usize, usize)],
) -> Result<(Tensor<T>, Vec<Vec<Explanation<T>>>)> {
    let ls: Vec<usize> = layers.iter().map(|&(l, _)| l).collect();
    let pass = gradcam_pass(model, input, classes, &ls)?;
    let mut out = Vec::with_capacity(layers.len());
    for &(l, d) in layers {
        let mut per = Vec::with_capacity(classes.len());
        for (i, &c) in classes.iter().enumerate() {
            let e =
                aggregate_explanation(&pass.feature_maps(l, i)?, &pass.importance(l, i, c)?, d)?;
            per.push(normalize_explanation(&e));
        }
        out.push(per);
    }
    Ok((pass.logits, out))
}

/// Independent uniform `[0,1)` entries of shape `[d,u,v]`, determined by `seed`.
pub fn noise_explanation(shape: [usize; 3], seed: u64) -> Explanation<f32> {
    let mut rng = seed::stream(&[seed::purpose::NOISE, seed]);
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen::<f32>()).collect();
    Explanation {
        data: Tensor::new(shape.to_vec(), data).expect("positive noise shape"),
        class: None,
        layer: None,
        depth: shape[0],
        scale: 1.0,
    }
}
