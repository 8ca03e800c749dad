//! Canonical emotion labels and the 7-component probability vector shared by
//! every stage of the pipeline.
//!
//! The label order is fixed: Joy, Neutral, Surprise, Anger, Disgust, Fear, Sad.
//! Vector indexing, JSON field order and argmax tie-breaking all follow it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of canonical emotion labels.
pub const NUM_LABELS: usize = 7;

/// Absolute tolerance on the component sum of a valid distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Inputs whose sum is within this distance of 1 are renormalized on load
/// instead of rejected.
pub const LOAD_TOLERANCE: f64 = 0.02;

/// Sums below this are treated as the zero vector.
pub const DEGENERATE_SUM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("all counts are zero")]
    AllZeroCounts,
    #[error("vector sums to {0:e}, cannot normalize")]
    DegenerateVector(f64),
    #[error("component {label} is {value}, expected a finite non-negative number")]
    InvalidComponent { label: EmotionLabel, value: f64 },
    #[error("components sum to {0}, outside 1 +/- {LOAD_TOLERANCE}")]
    SumOutOfTolerance(f64),
    #[error("unknown emotion label {0:?}")]
    BadLabel(String),
    #[error("cannot average an empty set of distributions")]
    Empty,
}

/// One of the seven canonical emotion categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Joy,
    Neutral,
    Surprise,
    Anger,
    Disgust,
    Fear,
    Sad,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; NUM_LABELS] = [
        EmotionLabel::Joy,
        EmotionLabel::Neutral,
        EmotionLabel::Surprise,
        EmotionLabel::Anger,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Sad,
    ];

    /// Position in the canonical order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Lowercase key used in CSV and JSON files.
    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Joy => "joy",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Sad => "sad",
        }
    }

    /// Capitalized name as it appears in prompts and LLM answers.
    pub fn display_name(self) -> &'static str {
        match self {
            EmotionLabel::Joy => "Joy",
            EmotionLabel::Neutral => "Neutral",
            EmotionLabel::Surprise => "Surprise",
            EmotionLabel::Anger => "Anger",
            EmotionLabel::Disgust => "Disgust",
            EmotionLabel::Fear => "Fear",
            EmotionLabel::Sad => "Sad",
        }
    }

    /// Noun used in natural-language descriptions ("a high level of happiness").
    pub fn noun(self) -> &'static str {
        match self {
            EmotionLabel::Joy => "happiness",
            EmotionLabel::Neutral => "neutrality",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Sad => "sadness",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = DistributionError;

    /// Accepts the lowercase file keys only; "happiness" and friends are rejected.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| DistributionError::BadLabel(s.to_string()))
    }
}

/// A probability distribution over the seven canonical labels.
///
/// Every value of this type has components in `[0, 1]` summing to 1 within
/// [`SUM_TOLERANCE`]. Constructors enforce that; there is no way to build an
/// unnormalized one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmotionDistribution {
    probs: [f64; NUM_LABELS],
}

impl EmotionDistribution {
    pub fn uniform() -> Self {
        Self {
            probs: [1.0 / NUM_LABELS as f64; NUM_LABELS],
        }
    }

    /// All mass on a single label.
    pub fn point_mass(label: EmotionLabel) -> Self {
        let mut probs = [0.0; NUM_LABELS];
        probs[label.index()] = 1.0;
        Self { probs }
    }

    /// Soft label from per-label rating counts.
    pub fn from_counts(counts: &[u64; NUM_LABELS]) -> Result<Self, DistributionError> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(DistributionError::AllZeroCounts);
        }
        let mut probs = [0.0; NUM_LABELS];
        for (p, &c) in probs.iter_mut().zip(counts) {
            *p = c as f64 / total as f64;
        }
        Ok(Self { probs })
    }

    /// Divides a non-negative vector by its sum.
    pub fn normalize(raw: &[f64; NUM_LABELS]) -> Result<Self, DistributionError> {
        check_components(raw)?;
        let sum: f64 = raw.iter().sum();
        if sum < DEGENERATE_SUM {
            return Err(DistributionError::DegenerateVector(sum));
        }
        let mut probs = [0.0; NUM_LABELS];
        for (p, &r) in probs.iter_mut().zip(raw) {
            *p = r / sum;
        }
        Ok(Self { probs })
    }

    /// Accepts an approximately normalized vector (sum within
    /// [`LOAD_TOLERANCE`] of 1) and renormalizes it. Used when reading files
    /// and LLM answers that carry rounding error. Vectors already within
    /// [`SUM_TOLERANCE`] are kept as given, so a save/load cycle is lossless.
    pub fn from_probs_tolerant(raw: &[f64; NUM_LABELS]) -> Result<Self, DistributionError> {
        check_components(raw)?;
        let sum: f64 = raw.iter().sum();
        if (sum - 1.0).abs() <= SUM_TOLERANCE {
            return Ok(Self { probs: *raw });
        }
        // The bound is inclusive; the slack absorbs representation error in
        // sums such as 0.62 + 0.4.
        if (sum - 1.0).abs() > LOAD_TOLERANCE + 1e-12 {
            return Err(DistributionError::SumOutOfTolerance(sum));
        }
        Self::normalize(raw)
    }

    pub fn probs(&self) -> &[f64; NUM_LABELS] {
        &self.probs
    }

    pub fn get(&self, label: EmotionLabel) -> f64 {
        self.probs[label.index()]
    }

    /// Most probable label; ties go to the earliest label in canonical order.
    pub fn argmax(&self) -> EmotionLabel {
        let mut best = 0;
        for i in 1..NUM_LABELS {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        EmotionLabel::ALL[best]
    }

    /// Adds `eps` to every component and renormalizes, leaving every
    /// component strictly positive.
    ///
    /// Panics if `eps` is not a finite positive number.
    pub fn smooth(&self, eps: f64) -> Self {
        assert!(eps.is_finite() && eps > 0.0, "smoothing epsilon must be positive, got {eps}");
        let denom = 1.0 + NUM_LABELS as f64 * eps;
        let mut probs = self.probs;
        for p in probs.iter_mut() {
            *p = (*p + eps) / denom;
        }
        Self { probs }
    }

    /// Unweighted arithmetic mean, renormalized.
    pub fn mean<'a, I>(dists: I) -> Result<Self, DistributionError>
    where
        I: IntoIterator<Item = &'a EmotionDistribution>,
    {
        let mut acc = [0.0; NUM_LABELS];
        let mut n = 0usize;
        for d in dists {
            for (a, p) in acc.iter_mut().zip(d.probs.iter()) {
                *a += p;
            }
            n += 1;
        }
        if n == 0 {
            return Err(DistributionError::Empty);
        }
        for a in acc.iter_mut() {
            *a /= n as f64;
        }
        Self::normalize(&acc)
    }

    /// True when components are in range and sum to 1 within [`SUM_TOLERANCE`].
    pub fn is_valid(&self) -> bool {
        self.probs.iter().all(|p| (0.0..=1.0).contains(p))
            && (self.probs.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE
    }
}

fn check_components(raw: &[f64; NUM_LABELS]) -> Result<(), DistributionError> {
    for (label, &value) in EmotionLabel::ALL.iter().zip(raw) {
        if !value.is_finite() || value < 0.0 {
            return Err(DistributionError::InvalidComponent {
                label: *label,
                value,
            });
        }
    }
    Ok(())
}

/// JSON object form with lowercase keys, all seven required.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionRepr {
    joy: f64,
    neutral: f64,
    surprise: f64,
    anger: f64,
    disgust: f64,
    fear: f64,
    sad: f64,
}

impl Serialize for EmotionDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let [joy, neutral, surprise, anger, disgust, fear, sad] = self.probs;
        DistributionRepr {
            joy,
            neutral,
            surprise,
            anger,
            disgust,
            fear,
            sad,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EmotionDistribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let r = DistributionRepr::deserialize(deserializer)?;
        let raw = [r.joy, r.neutral, r.surprise, r.anger, r.disgust, r.fear, r.sad];
        EmotionDistribution::from_probs_tolerant(&raw).map_err(serde::de::Error::custom)
    }
}
