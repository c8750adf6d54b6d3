//! Datasets held in memory as contiguous `[N,C,H,W]` pixel arrays with stable sample ids.

mod cifar;
mod synthetic;

pub use cifar::{
    export_cifar_layout, load_cifar_binary, parse_cifar_records, write_cifar_records, CifarVariant,
    CIFAR_SIDE, TEST_ID_BASE,
};
pub use synthetic::{make_synthetic_shapes, synthetic_split, SyntheticSpec};

use rand::seq::SliceRandom;

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::seed;

/// One sample: `[C,H,W]` image, label and id.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: u64,
    pub image: Tensor<f32>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n_classes: usize,
    /// `[C,H,W]` of every image.
    pub image_shape: [usize; 3],
    pixels: Vec<f32>,
    labels: Vec<usize>,
    ids: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(
        n_classes: usize,
        image_shape: [usize; 3],
        pixels: Vec<f32>,
        labels: Vec<usize>,
        ids: Vec<u64>,
    ) -> Result<Self> {
        let per: usize = image_shape.iter().product();
        if per == 0 || pixels.len() != per * labels.len() || ids.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} pixels, {} labels and {} ids do not form {image_shape:?} images",
                pixels.len(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range 0..{n_classes}"
            )));
        }
        Ok(Self {
            n_classes,
            image_shape,
            pixels,
            labels,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn record(&self, i: usize) -> SampleRecord {
        SampleRecord {
            id: self.ids[i],
            image: Tensor::new(self.image_shape.to_vec(), self.image(i).to_vec()).unwrap(),
            label: self.labels[i],
        }
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            n_classes: self.n_classes,
            image_shape: self.image_shape,
            pixels: self.pixels[..n * self.image_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ids: self.ids[..n].to_vec(),
        }
    }

    /// `[B,C,H,W]` images and labels of the samples at `indices`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let per = self.image_len();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.image_shape;
        let t = Tensor::new([indices.len(), c, h, w], data).expect("non-empty batch");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Per-channel mean and standard deviation of a training split.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Standardized copy of `data`.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let [c, h, w] = data.image_shape;
        if c != self.mean.len() {
            return Err(Error::Shape(format!(
                "statistics for {} channels applied to {c}-channel images",
                self.mean.len()
            )));
        }
        let hw = h * w;
        let mut pixels = data.pixels.clone();
        for (j, v) in pixels.iter_mut().enumerate() {
            let ch = (j / hw) % c;
            *v = ((*v as f64 - self.mean[ch]) / self.std[ch]) as f32;
        }
        Ok(Dataset {
            pixels,
            ..data.clone()
        })
    }
}

pub fn compute_normalization(train: &Dataset) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot normalize an empty split".into(),
        ));
    }
    let [c, h, w] = train.image_shape;
    let hw = h * w;
    let mut sum = vec![0f64; c];
    let mut sq = vec![0f64; c];
    for img in train.pixels.chunks(c * hw) {
        for ch in 0..c {
            for &v in &img[ch * hw..(ch + 1) * hw] {
                sum[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
    }
    let n = (train.len() * hw) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut std = Vec::with_capacity(c);
    for ch in 0..c {
        let var = (sq[ch] / n - mean[ch] * mean[ch]).max(0.0);
        if var <= 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "channel {ch} has zero variance"
            )));
        }
        std.push(var.sqrt());
    }
    Ok(NormalizationStats { mean, std })
}

/// Index batches covering `0..n` once, in a permutation determined by `(seed, epoch)`.
/// The last batch may be short.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream(&[
        seed::purpose::SHUFFLE,
        seed,
        epoch as u64,
    ]));
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Index batches covering `0..n` in order.
pub fn sequential_batches(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..n)
        .collect::<Vec<_>>()
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> Dataset {
        let pixels: Vec<f32> = (0..4 * 2 * 2 * 2).map(|v| v as f32 / 31.0).collect();
        Dataset::new(3, [2, 2, 2], pixels, vec![0, 2, 1, 2], vec![10, 11, 12, 13]).unwrap()
    }

    #[test]
    fn batch_gathers_images_in_index_order() {
        let d = tiny();
        let (x, y) = d.batch(&[2, 0]);
        assert_eq!(x.shape(), &[2, 2, 2, 2]);
        assert_eq!(&x.data()[..8], d.image(2));
        assert_eq!(y, vec![1, 0]);
        assert_eq!(d.record(1).id, 11);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        assert!(Dataset::new(2, [1, 1, 1], vec![0.0], vec![2], vec![0]).is_err());
    }

    #[test]
    fn standardized_train_split_has_zero_mean() {
        let d = tiny();
        let stats = compute_normalization(&d).unwrap();
        let z = stats.apply(&d).unwrap();
        let again = compute_normalization(&z).unwrap();
        for (m, s) in again.mean.iter().zip(&again.std) {
            assert!(m.abs() < 1e-6);
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_variance_channel_is_an_error() {
        let d = Dataset::new(2, [1, 1, 2], vec![0.5; 4], vec![0, 1], vec![0, 1]).unwrap();
        assert!(compute_normalization(&d).is_err());
    }

    proptest! {
        #[test]
        fn batches_cover_each_sample_once(n in 1usize..300, b in 1usize..130, seed in any::<u64>(), epoch in 0usize..5) {
            let batches = epoch_batches(n, b, seed, epoch);
            let mut seen: Vec<usize> = batches.concat();
            prop_assert!(batches.iter().all(|x| x.len() <= b && !x.is_empty()));
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(batches, epoch_batches(n, b, seed, epoch));
        }
    }
}
