use std::collections::HashMap;

use super::policy::ExpSource;
use crate::arch::{AttachSpec, ClassifierModel, Role};
use crate::data::Dataset;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::explainer::{explain_batch, noise_explanation, CacheKey, ExplanationCache};
use crate::seed;

/// Samples per generator pass when filling the cache.
const GENERATOR_BATCH: usize = 128;

/// Supplies the reflective network's explanation inputs and the frozen generator's
/// logits, caching both by sample id.
///
/// For `Self` and `Other` the generator explains; for `Noise` it only supplies logits
/// (needed to resolve `Pre`, `kth` and the `Pred` test mode) and explanations are
/// seeded noise keyed by sample id.
pub struct ExplanationProvider<'g> {
    source: ExpSource,
    generator: &'g ClassifierModel<f32>,
    attach: Vec<AttachSpec>,
    shapes: Vec<[usize; 3]>,
    noise_seed: u64,
    noise_round: u64,
    cache: ExplanationCache,
    logits: HashMap<u64, Vec<f32>>,
}

impl<'g> ExplanationProvider<'g> {
    /// `image_hw` is the input resolution, which fixes the explanation sizes.
    pub fn new(
        source: ExpSource,
        generator: &'g ClassifierModel<f32>,
        attach: Vec<AttachSpec>,
        image_hw: (usize, usize),
        noise_seed: u64,
    ) -> Result<Self> {
        if generator.role() != Role::Base {
            return Err(Error::InvalidArgument(
                "the generator must be a base classifier".into(),
            ));
        }
        if attach.is_empty() {
            return Err(Error::Config("no attach point".into()));
        }
        let mut shapes = Vec::with_capacity(attach.len());
        for a in &attach {
            let (k, u, v) = generator.tap_shape(a.layer, image_hw.0, image_hw.1)?;
            if a.depth == 0 || k % a.depth != 0 {
                return Err(Error::Config(format!(
                    "depth {} does not divide the {k} channels of layer {}",
                    a.depth, a.layer
                )));
            }
            shapes.push([a.depth, u, v]);
        }
        Ok(Self {
            source,
            generator,
            attach,
            shapes,
            noise_seed,
            noise_round: 0,
            cache: ExplanationCache::new(),
            logits: HashMap::new(),
        })
    }

    pub fn source(&self) -> ExpSource {
        self.source
    }

    pub fn generator(&self) -> &ClassifierModel<f32> {
        self.generator
    }

    pub fn attach(&self) -> &[AttachSpec] {
        &self.attach
    }

    /// `[d,u,v]` per attach point.
    pub fn shapes(&self) -> &[[usize; 3]] {
        &self.shapes
    }

    pub fn cache(&self) -> &ExplanationCache {
        &self.cache
    }

    /// Replaces the cache, e.g. with one loaded from disk for the same generator.
    pub fn set_cache(&mut self, cache: ExplanationCache) {
        self.cache = cache;
    }

    /// Noise explanations are keyed by `(noise seed, round, sample id, attach index)`.
    /// Training sets a fresh round per epoch so noise cannot act as a sample identifier;
    /// round 0 is used for testing.
    pub fn set_noise_round(&mut self, round: u64) {
        self.noise_round = round;
    }

    fn key(&self, id: u64, class: usize, a: &AttachSpec) -> CacheKey {
        CacheKey::new(id, class, a.layer, a.depth)
    }

    /// Generator logits of the samples at `indices`.
    pub fn logits(&mut self, data: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f32>>> {
        let missing: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| !self.logits.contains_key(&data.ids()[i]))
            .collect();
        for chunk in missing.chunks(GENERATOR_BATCH) {
            let (x, _) = data.batch(chunk);
            let z = self.generator.logits(&x, None)?;
            let n = z.dim(1);
            for (j, &i) in chunk.iter().enumerate() {
                self.logits
                    .insert(data.ids()[i], z.data()[j * n..(j + 1) * n].to_vec());
            }
        }
        Ok(indices
            .iter()
            .map(|&i| self.logits[&data.ids()[i]].clone())
            .collect())
    }

    /// One `[B,d,u,v]` tensor per attach point: the explanation of `classes[j]` for the
    /// sample at `indices[j]`.
    pub fn explanations(
        &mut self,
        data: &Dataset,
        indices: &[usize],
        classes: &[usize],
    ) -> Result<Vec<Tensor<f32>>> {
        if indices.len() != classes.len() {
            return Err(Error::InvalidArgument(
                "one class per sample is required".into(),
            ));
        }
        if self.source == ExpSource::Noise {
            return Ok(self.noise(data, indices));
        }
        self.fill(data, indices, classes)?;
        let mut out = Vec::with_capacity(self.attach.len());
        for (a, &[d, u, v]) in self.attach.iter().zip(&self.shapes) {
            let mut buf = Vec::with_capacity(indices.len() * d * u * v);
            for (&i, &c) in indices.iter().zip(classes) {
                let key = self.key(data.ids()[i], c, a);
                let e = self
                    .cache
                    .get(&key)
                    .ok_or_else(|| Error::MissingExplanation(format!("{key:?}")))?;
                buf.extend_from_slice(e.data());
            }
            out.push(Tensor::new([indices.len(), d, u, v], buf)?);
        }
        Ok(out)
    }

    fn noise(&self, data: &Dataset, indices: &[usize]) -> Vec<Tensor<f32>> {
        self.shapes
            .iter()
            .enumerate()
            .map(|(p, &[d, u, v])| {
                let mut buf = Vec::with_capacity(indices.len() * d * u * v);
                for &i in indices {
                    let s = seed::derive_seed(&[
                        self.noise_seed,
                        self.noise_round,
                        data.ids()[i],
                        p as u64,
                    ]);
                    buf.extend_from_slice(noise_explanation([d, u, v], s).data.data());
                }
                Tensor::new([indices.len(), d, u, v], buf).expect("positive shape")
            })
            .collect()
    }

    /// Computes and caches every (sample, class) pair not yet present.
    fn fill(&mut self, data: &Dataset, indices: &[usize], classes: &[usize]) -> Result<()> {
        let mut todo: Vec<(usize, usize)> = Vec::new();
        for (&i, &c) in indices.iter().zip(classes) {
            let id = data.ids()[i];
            let missing = self
                .attach
                .iter()
                .any(|a| !self.cache.contains(&self.key(id, c, a)));
            if missing && !todo.contains(&(i, c)) {
                todo.push((i, c));
            }
        }
        let layers: Vec<(usize, usize)> = self.attach.iter().map(|a| (a.layer, a.depth)).collect();
        for chunk in todo.chunks(GENERATOR_BATCH) {
            let idx: Vec<usize> = chunk.iter().map(|&(i, _)| i).collect();
            let cls: Vec<usize> = chunk.iter().map(|&(_, c)| c).collect();
            let (x, _) = data.batch(&idx);
            let (z, per_layer) = explain_batch(self.generator, &x, &cls, &layers)?;
            let n = z.dim(1);
            for (j, &(i, c)) in chunk.iter().enumerate() {
                let id = data.ids()[i];
                self.logits
                    .entry(id)
                    .or_insert_with(|| z.data()[j * n..(j + 1) * n].to_vec());
                for (a, es) in self.attach.iter().zip(&per_layer) {
                    let key = CacheKey::new(id, c, a.layer, a.depth);
                    self.cache.insert(key, es[j].data.clone())?;
                }
            }
        }
        Ok(())
    }
}
