//! Parametric shape images: one geometric pattern per class at a random position, scale
//! and colour on a random background, optionally over smaller distractor patterns of
//! random classes, plus Gaussian pixel noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Split, TEST_ID_BASE};
use crate::error::{Error, Result};
use crate::seed;

pub const MAX_SHAPE_CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub size: usize,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f32,
    /// Foreground/background contrast range `[lo, hi)`.
    pub contrast: [f32; 2],
    /// Shape radius range as a fraction of the image side.
    pub radius: [f32; 2],
    /// Number of distractor patterns drawn beneath the labelled one.
    #[serde(default)]
    pub clutter: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n_classes: usize, size: usize, seed: u64) -> Self {
        Self {
            n_classes,
            size,
            noise: 0.1,
            contrast: [0.35, 0.8],
            radius: [0.32, 0.45],
            clutter: 0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::InvalidArgument(format!(
                "image size {} is below 8",
                self.size
            )));
        }
        if !(2..=MAX_SHAPE_CLASSES).contains(&self.n_classes) {
            return Err(Error::InvalidArgument(format!(
                "synthetic shapes support 2..={MAX_SHAPE_CLASSES} classes, got {}",
                self.n_classes
            )));
        }
        Ok(())
    }

    /// Renders sample `id`; its class is `id % n_classes`, so any prefix of consecutive
    /// ids is balanced up to one sample per class.
    fn render(&self, id: u64, out: &mut Vec<f32>) -> usize {
        let class = (id % self.n_classes as u64) as usize;
        let mut rng = seed::stream(&[seed::purpose::DATA, self.seed, id]);
        let bg: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
        let mut layers = Vec::with_capacity(self.clutter + 1);
        for _ in 0..self.clutter {
            let other = rng.gen_range(0..self.n_classes);
            layers.push(self.pattern(other, DISTRACTOR_SCALE, &bg, &mut rng));
        }
        layers.push(self.pattern(class, 1.0, &bg, &mut rng));
        let noise = Normal::new(0.0, self.noise.max(0.0)).unwrap();
        let start = out.len();
        out.resize(start + 3 * self.size * self.size, 0.0);
        let plane = self.size * self.size;
        for y in 0..self.size {
            for x in 0..self.size {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let colour = layers
                    .iter()
                    .rev()
                    .find(|l| l.contains(px, py))
                    .map_or(&bg, |l| &l.colour);
                for c in 0..3 {
                    let v = colour[c] + noise.sample(&mut rng);
                    out[start + c * plane + y * self.size + x] = v.clamp(0.0, 1.0);
                }
            }
        }
        class
    }

    fn pattern(&self, class: usize, scale: f32, bg: &[f32; 3], rng: &mut impl Rng) -> Pattern {
        let s = self.size as f32;
        let r = scale * s * rng.gen_range(self.radius[0]..self.radius[1]);
        let cx = rng.gen_range(r * 0.8..s - r * 0.8);
        let cy = rng.gen_range(r * 0.8..s - r * 0.8);
        let contrast = rng.gen_range(self.contrast[0]..self.contrast[1]);
        let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        Pattern {
            class,
            centre: [cx, cy],
            radius: r,
            colour: std::array::from_fn(|c| bg[c] + dir * contrast),
        }
    }

    fn generate(&self, count: usize, first_id: u64) -> Result<Dataset> {
        self.validate()?;
        let mut pixels = Vec::with_capacity(count * 3 * self.size * self.size);
        let mut labels = Vec::with_capacity(count);
        let mut ids = Vec::with_capacity(count);
        for i in 0..count as u64 {
            labels.push(self.render(first_id + i, &mut pixels));
            ids.push(first_id + i);
        }
        Dataset::new(
            self.n_classes,
            [3, self.size, self.size],
            pixels,
            labels,
            ids,
        )
    }
}

/// Distractor radius relative to the labelled pattern.
const DISTRACTOR_SCALE: f32 = 0.6;

struct Pattern {
    class: usize,
    centre: [f32; 2],
    radius: f32,
    colour: [f32; 3],
}

impl Pattern {
    fn contains(&self, x: f32, y: f32) -> bool {
        shape_contains(
            self.class,
            (x - self.centre[0]) / self.radius,
            (y - self.centre[1]) / self.radius,
        )
    }
}

/// Membership test for the pattern of `class` in coordinates scaled by the radius.
fn shape_contains(class: usize, dx: f32, dy: f32) -> bool {
    let in_box = dx.abs() <= 1.0 && dy.abs() <= 1.0;
    let d2 = dx * dx + dy * dy;
    match class {
        0 => d2 <= 1.0,
        1 => (dx.abs() <= 0.3 && dy.abs() <= 1.0) || (dy.abs() <= 0.3 && dx.abs() <= 1.0),
        2 => in_box && ((dy + 1.0) * 2.5).floor() as i32 % 2 == 0,
        3 => (-0.9..=0.8).contains(&dy) && dx.abs() <= (dy + 0.9) * 0.55,
        4 => (0.3..=1.0).contains(&d2),
        5 => dx.abs() <= 0.8 && dy.abs() <= 0.8,
        6 => in_box && ((dx + 1.0) * 2.5).floor() as i32 % 2 == 0,
        7 => in_box && ((dx - dy).abs() <= 0.35 || (dx + dy).abs() <= 0.35),
        8 => {
            in_box
                && (((dx + 1.0) * 2.0).floor() as i32 + ((dy + 1.0) * 2.0).floor() as i32) % 2 == 0
        }
        _ => dx.abs() + dy.abs() <= 1.0,
    }
}

/// `n_classes * n_per_class` samples with ids `0..`, balanced, default noise.
pub fn make_synthetic_shapes(
    n_classes: usize,
    n_per_class: usize,
    size: usize,
    seed: u64,
) -> Result<Dataset> {
    SyntheticSpec::new(n_classes, size, seed).generate(n_classes * n_per_class, 0)
}

/// Train and test splits drawn from the same distribution; test ids start at
/// [`TEST_ID_BASE`].
pub fn synthetic_split(spec: &SyntheticSpec, n_train: usize, n_test: usize) -> Result<Split> {
    Ok(Split {
        train: spec.generate(n_train, 0)?,
        test: spec.generate(n_test, TEST_ID_BASE)?,
    })
}
