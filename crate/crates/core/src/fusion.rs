//! Bayesian cue integration of a face-only and a context-only emotion
//! distribution, and the prose rendering of a face distribution used when an
//! LLM performs the integration instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{EmotionDistribution, EmotionLabel, DEGENERATE_SUM, NUM_LABELS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("eps_floor must be a finite positive number, got {0}")]
    InvalidEpsFloor(f64),
    #[error("use_prior is set but no prior was supplied")]
    MissingPrior,
    #[error("prior component {0} is zero; cannot divide by it")]
    ZeroPrior(EmotionLabel),
    #[error("fused product sums to {0:e}")]
    DegenerateFusion(f64),
    #[error("invalid band table: {0}")]
    InvalidBandTable(String),
}

fn default_eps_floor() -> f64 {
    1e-6
}

/// Parameters of [`bci_fuse`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Additive smoothing applied to both inputs before the product.
    #[serde(default = "default_eps_floor")]
    pub eps_floor: f64,
    /// Base rate P(e). Only consulted when `use_prior` is set.
    #[serde(default)]
    pub prior: Option<EmotionDistribution>,
    #[serde(default)]
    pub use_prior: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            eps_floor: default_eps_floor(),
            prior: None,
            use_prior: false,
        }
    }
}

impl FusionConfig {
    pub fn with_prior(prior: EmotionDistribution) -> Self {
        Self {
            prior: Some(prior),
            use_prior: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.eps_floor.is_finite() && self.eps_floor > 0.0) {
            return Err(FusionError::InvalidEpsFloor(self.eps_floor));
        }
        if self.use_prior {
            let prior = self.prior.as_ref().ok_or(FusionError::MissingPrior)?;
            for label in EmotionLabel::ALL {
                if prior.get(label) <= 0.0 {
                    return Err(FusionError::ZeroPrior(label));
                }
            }
        }
        Ok(())
    }
}

/// Posterior over emotions given both cues:
/// `P(e|c,f) ∝ P(e|f) · P(e|c) / P(e)`.
///
/// Both inputs are smoothed with `cfg.eps_floor` first so that a hard zero in
/// one channel cannot veto the other. Without a prior the division is
/// skipped and the product is simply renormalized.
pub fn bci_fuse(
    face: &EmotionDistribution,
    context: &EmotionDistribution,
    cfg: &FusionConfig,
) -> Result<EmotionDistribution, FusionError> {
    cfg.validate()?;
    let f = face.smooth(cfg.eps_floor);
    let c = context.smooth(cfg.eps_floor);
    let mut product = [0.0; NUM_LABELS];
    for ((p, a), b) in product.iter_mut().zip(f.probs()).zip(c.probs()) {
        *p = a * b;
    }
    if cfg.use_prior {
        // validate() guarantees the prior is present and positive
        let prior = cfg.prior.as_ref().ok_or(FusionError::MissingPrior)?;
        for (p, q) in product.iter_mut().zip(prior.probs()) {
            *p /= q;
        }
    }
    let sum: f64 = product.iter().sum();
    if sum < DEGENERATE_SUM {
        return Err(FusionError::DegenerateFusion(sum));
    }
    EmotionDistribution::normalize(&product).map_err(|_| FusionError::DegenerateFusion(sum))
}

/// One probability interval and the word used for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
    pub phrase: String,
}

/// Maps probabilities to qualitative levels. Bands are half-open
/// `[lower, upper)` except the last, which includes 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandTable {
    pub bands: Vec<Band>,
    /// Labels below this probability are left out of the description.
    pub report_floor: f64,
}

impl Default for BandTable {
    fn default() -> Self {
        let band = |lower: f64, upper: f64, phrase: &str| Band {
            lower,
            upper,
            phrase: phrase.to_string(),
        };
        Self {
            bands: vec![
                band(0.0, 0.1, "very low"),
                band(0.1, 0.3, "low"),
                band(0.3, 0.5, "moderate"),
                band(0.5, 1.0, "high"),
            ],
            report_floor: 0.1,
        }
    }
}

impl BandTable {
    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |msg: String| Err(FusionError::InvalidBandTable(msg));
        let (Some(first), Some(last)) = (self.bands.first(), self.bands.last()) else {
            return bad("no bands".into());
        };
        if first.lower != 0.0 {
            return bad(format!("first band starts at {}, expected 0", first.lower));
        }
        if last.upper != 1.0 {
            return bad(format!("last band ends at {}, expected 1", last.upper));
        }
        for b in &self.bands {
            if b.lower.partial_cmp(&b.upper) != Some(std::cmp::Ordering::Less) {
                return bad(format!("band {:?} is empty", b.phrase));
            }
            if b.phrase.trim().is_empty() {
                return bad("band with empty phrase".into());
            }
        }
        for w in self.bands.windows(2) {
            if w[0].upper != w[1].lower {
                return bad(format!(
                    "gap or overlap between {:?} and {:?}",
                    w[0].phrase, w[1].phrase
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.report_floor) {
            return bad(format!("report_floor {} outside [0, 1]", self.report_floor));
        }
        Ok(())
    }

    /// Band containing `p`. Assumes a validated table and `p` in `[0, 1]`.
    pub fn band_for(&self, p: f64) -> &Band {
        self.bands
            .iter()
            .find(|b| p >= b.lower && p < b.upper)
            .unwrap_or_else(|| self.bands.last().expect("validated table is non-empty"))
    }
}

/// Renders a face distribution as prose, one clause per reportable label in
/// canonical order, e.g. "Player A's facial expression shows a high level of
/// happiness and a low level of surprise."
pub fn describe_distribution_nl(
    face: &EmotionDistribution,
    bands: &BandTable,
) -> Result<String, FusionError> {
    bands.validate()?;
    let clauses: Vec<String> = EmotionLabel::ALL
        .iter()
        .filter(|l| face.get(**l) >= bands.report_floor)
        .map(|l| format!("a {} level of {}", bands.band_for(face.get(*l)).phrase, l.noun()))
        .collect();
    let body = match clauses.len() {
        0 => "no clearly identifiable emotion".to_string(),
        1 => clauses[0].clone(),
        n => format!("{}, and {}", clauses[..n - 1].join(", "), clauses[n - 1]),
    };
    Ok(format!("Player A's facial expression shows {body}."))
}
