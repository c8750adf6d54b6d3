use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// One element of the training set of explained classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExplainedClass {
    /// Ground truth.
    Cor,
    /// Base classifier's prediction.
    Pre,
    /// Class with the k-th largest logit, `k >= 2`.
    Kth(usize),
    /// The sample's fixed random class.
    Ran,
}

impl ExplainedClass {
    pub fn needs_logits(self) -> bool {
        matches!(self, ExplainedClass::Pre | ExplainedClass::Kth(_))
    }
}

fn ordinal_suffix(k: usize) -> &'static str {
    match (k % 10, k % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    }
}

impl fmt::Display for ExplainedClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExplainedClass::Cor => f.write_str("Cor"),
            ExplainedClass::Pre => f.write_str("Pre"),
            ExplainedClass::Kth(k) => write!(f, "{k}{}", ordinal_suffix(*k)),
            ExplainedClass::Ran => f.write_str("Ran"),
        }
    }
}

impl FromStr for ExplainedClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Cor" => return Ok(ExplainedClass::Cor),
            "Pre" => return Ok(ExplainedClass::Pre),
            "Ran" => return Ok(ExplainedClass::Ran),
            _ => {}
        }
        let digits: String = s.chars().take_while(char::is_ascii_digit).collect();
        let k: usize = digits
            .parse()
            .map_err(|_| Error::Config(format!("unknown explained class {s:?}")))?;
        if k < 2 || s != format!("{k}{}", ordinal_suffix(k)) {
            return Err(Error::Config(format!(
                "unknown explained class {s:?} (use Cor, Pre, Ran or 2nd, 3rd, ...)"
            )));
        }
        Ok(ExplainedClass::Kth(k))
    }
}

impl Serialize for ExplainedClass {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExplainedClass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rule selecting the explained class at test time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TestMode {
    Pred,
    Cor,
    Ran,
}

impl fmt::Display for TestMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestMode::Pred => "Pred",
            TestMode::Cor => "Cor",
            TestMode::Ran => "Ran",
        })
    }
}

impl FromStr for TestMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Pred" => Ok(TestMode::Pred),
            "Cor" => Ok(TestMode::Cor),
            "Ran" => Ok(TestMode::Ran),
            _ => Err(Error::Config(format!("unknown test mode {s:?}"))),
        }
    }
}

/// Where the reflective network's explanations come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpSource {
    /// Fine-tune the base classifier; explanations from its frozen snapshot.
    #[serde(rename = "Self")]
    SelfNet,
    /// Random init; explanations from an independently trained classifier.
    Other,
    /// Random init; uniform noise instead of explanations.
    Noise,
}

impl fmt::Display for ExpSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpSource::SelfNet => "Self",
            ExpSource::Other => "Other",
            ExpSource::Noise => "Noise",
        })
    }
}

impl FromStr for ExpSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Self" => Ok(ExpSource::SelfNet),
            "Other" => Ok(ExpSource::Other),
            "Noise" => Ok(ExpSource::Noise),
            _ => Err(Error::Config(format!("unknown explanation source {s:?}"))),
        }
    }
}

/// Fixed random class per sample, index-aligned with the dataset it was drawn for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleAnnotations {
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub random_classes: Vec<usize>,
}

/// Draws `y_r` uniformly from `0..n` for every sample, from a stream keyed by
/// `(seed, sample id)`.
pub fn assign_random_classes(data: &Dataset, n: usize, seed: u64) -> Result<SampleAnnotations> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {n}"
        )));
    }
    let random_classes = data
        .ids()
        .iter()
        .map(|&id| seed::stream(&[seed::purpose::RANDOM_CLASS, seed, id]).gen_range(0..n))
        .collect();
    Ok(SampleAnnotations {
        ids: data.ids().to_vec(),
        labels: data.labels().to_vec(),
        random_classes,
    })
}

/// Class with the `k`-th largest value (1-based); ties go to the lowest index.
pub fn kth_largest(logits: &[f32], k: usize) -> Option<usize> {
    if k == 0 || k > logits.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    Some(order[k - 1])
}

pub fn argmax(logits: &[f32]) -> usize {
    kth_largest(logits, 1).expect("non-empty logits")
}

/// Stream for the explained-class draw of one sample in one epoch.
pub fn draw_rng(seed: u64, sample_id: u64, epoch: usize) -> ChaCha8Rng {
    seed::stream(&[seed::purpose::POLICY_DRAW, seed, sample_id, epoch as u64])
}

/// Uniform draw from the multiset `set`, resolved against the sample.
pub fn sample_explained_class<R: Rng>(
    label: usize,
    random_class: usize,
    logits: Option<&[f32]>,
    set: &[ExplainedClass],
    rng: &mut R,
) -> Result<usize> {
    draw_explained_class(label, random_class, logits, set, rng).map(|(_, c)| c)
}

/// Like [`sample_explained_class`], also returning the member of `set` that was drawn.
pub fn draw_explained_class<R: Rng>(
    label: usize,
    random_class: usize,
    logits: Option<&[f32]>,
    set: &[ExplainedClass],
    rng: &mut R,
) -> Result<(ExplainedClass, usize)> {
    if set.is_empty() {
        return Err(Error::Config(
            "the set of explained classes is empty".into(),
        ));
    }
    let pick = set[rng.gen_range(0..set.len())];
    Ok((pick, resolve(pick, label, random_class, logits)?))
}

fn resolve(
    pick: ExplainedClass,
    label: usize,
    random_class: usize,
    logits: Option<&[f32]>,
) -> Result<usize> {
    let need = |k: usize| -> Result<usize> {
        let z = logits.ok_or_else(|| {
            Error::InvalidArgument(format!("{pick} needs the base classifier's logits"))
        })?;
        kth_largest(z, k).ok_or_else(|| {
            Error::InvalidArgument(format!("{pick} exceeds the {} classes", z.len()))
        })
    };
    match pick {
        ExplainedClass::Cor => Ok(label),
        ExplainedClass::Ran => Ok(random_class),
        ExplainedClass::Pre => need(1),
        ExplainedClass::Kth(k) => need(k),
    }
}

/// Explained class at test time. `Ran` draws a fresh class from a stream keyed by
/// `(seed, sample id)`.
pub fn test_class(
    mode: TestMode,
    logits: &[f32],
    label: Option<usize>,
    seed: u64,
    sample_id: u64,
) -> Result<usize> {
    match mode {
        TestMode::Pred => Ok(argmax(logits)),
        TestMode::Cor => label.ok_or_else(|| {
            Error::InvalidArgument("test mode Cor needs the ground-truth label".into())
        }),
        TestMode::Ran => Ok(
            seed::stream(&[seed::purpose::TEST_RANDOM_CLASS, seed, sample_id])
                .gen_range(0..logits.len()),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn parses_and_prints_class_names() {
        for s in [
            "Cor", "Pre", "Ran", "2nd", "3rd", "4th", "11th", "21st", "22nd",
        ] {
            assert_eq!(s.parse::<ExplainedClass>().unwrap().to_string(), s);
        }
        for s in ["1st", "2th", "cor", "", "0th", "x"] {
            assert!(s.parse::<ExplainedClass>().is_err(), "{s}");
        }
        assert_eq!(
            "2nd".parse::<ExplainedClass>().unwrap(),
            ExplainedClass::Kth(2)
        );
    }

    #[test]
    fn kth_largest_breaks_ties_by_index() {
        let z = [0.1, 2.0, 1.5, 2.0];
        assert_eq!(kth_largest(&z, 1), Some(1));
        assert_eq!(kth_largest(&z, 2), Some(3));
        assert_eq!(kth_largest(&z, 3), Some(2));
        assert_eq!(kth_largest(&z, 5), None);
    }

    #[test]
    fn cor_only_is_always_the_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(
                sample_explained_class(4, 2, None, &[ExplainedClass::Cor], &mut rng).unwrap(),
                4
            );
        }
    }

    #[test]
    fn kth_beyond_classes_and_missing_logits_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = [0.0, 1.0];
        assert!(
            sample_explained_class(0, 0, Some(&z), &[ExplainedClass::Kth(3)], &mut rng).is_err()
        );
        assert!(sample_explained_class(0, 0, None, &[ExplainedClass::Pre], &mut rng).is_err());
        assert!(sample_explained_class(0, 0, None, &[], &mut rng).is_err());
    }

    #[test]
    fn cor_mode_needs_label() {
        assert!(test_class(TestMode::Cor, &[0.0, 1.0], None, 0, 0).is_err());
        assert_eq!(
            test_class(TestMode::Pred, &[0.0, 1.0], None, 0, 0).unwrap(),
            1
        );
    }
}
