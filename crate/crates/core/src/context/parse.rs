use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::distributions::{DistributionError, EmotionDistribution, EmotionLabel, NUM_LABELS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("answer has no value for {0}")]
    MissingLabel(EmotionLabel),
    #[error("answer gives {0} more than once")]
    DuplicateLabel(EmotionLabel),
    #[error("value for {label} is not a probability: {text:?}")]
    MalformedNumber { label: EmotionLabel, text: String },
    #[error("probabilities sum to {0}, outside 1 +/- 0.02")]
    SumOutOfTolerance(f64),
}

fn pair_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(joy|neutral|surprise|anger|disgust|fear|sad)\b[\s*]*:\s*([^\s,;]*)")
            .expect("static regex")
    })
}

fn parse_value(token: &str) -> Option<f64> {
    let t = token.trim_matches(|c: char| matches!(c, '*' | '"' | '\'' | '\u{201c}' | '\u{201d}' | '(' | ')' | '[' | ']' | '{' | '}'));
    let t = t.trim_end_matches('.');
    let (t, scale) = match t.strip_suffix('%') {
        Some(rest) => (rest, 0.01),
        None => (t, 1.0),
    };
    let v: f64 = t.parse().ok()?;
    let v = v * scale;
    (v.is_finite() && v >= 0.0).then_some(v)
}

/// Extracts the seven `Label: number` pairs from a model answer. Labels are
/// matched case-insensitively in any order and surrounding prose is ignored.
/// A sum within 0.02 of 1 is renormalized; anything further off is rejected.
pub fn parse_llm_distribution(raw: &str) -> Result<EmotionDistribution, ParseError> {
    let mut values: [Option<f64>; NUM_LABELS] = [None; NUM_LABELS];
    for cap in pair_regex().captures_iter(raw) {
        let label: EmotionLabel = cap[1]
            .to_ascii_lowercase()
            .parse()
            .expect("regex only matches canonical labels");
        let token = &cap[2];
        let value = parse_value(token).ok_or_else(|| ParseError::MalformedNumber {
            label,
            text: token.to_string(),
        })?;
        let slot = &mut values[label.index()];
        if slot.is_some() {
            return Err(ParseError::DuplicateLabel(label));
        }
        *slot = Some(value);
    }
    let mut probs = [0.0; NUM_LABELS];
    for label in EmotionLabel::ALL {
        probs[label.index()] = values[label.index()].ok_or(ParseError::MissingLabel(label))?;
    }
    EmotionDistribution::from_probs_tolerant(&probs).map_err(|e| match e {
        DistributionError::SumOutOfTolerance(s) => ParseError::SumOutOfTolerance(s),
        DistributionError::DegenerateVector(s) => ParseError::SumOutOfTolerance(s),
        other => unreachable!("components already checked: {other}"),
    })
}

/// Renders a distribution in the requested answer format with six decimals.
/// Rounding uses largest remainders so the printed values sum to exactly 1,
/// which keeps every component within 1e-6 after a parse.
pub fn format_answer(d: &EmotionDistribution) -> String {
    const SCALE: f64 = 1e6;
    let scaled = d.probs().map(|p| p * SCALE);
    let mut units = scaled.map(|s| s.floor() as i64);
    let mut order: Vec<usize> = (0..NUM_LABELS).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - units[a] as f64;
        let rb = scaled[b] - units[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut deficit = SCALE as i64 - units.iter().sum::<i64>();
    for &i in order.iter().cycle().take(NUM_LABELS * 2) {
        if deficit > 0 {
            units[i] += 1;
            deficit -= 1;
        } else if deficit < 0 && units[i] > 0 {
            units[i] -= 1;
            deficit += 1;
        }
    }
    let parts: Vec<String> = EmotionLabel::ALL
        .iter()
        .map(|l| {
            let u = units[l.index()];
            format!("{}: {}.{:06}", l.display_name(), u / 1_000_000, u % 1_000_000)
        })
        .collect();
    format!("{}.", parts.join(", "))
}
