//! Distribution distances (KLD, RMSE), weighted F1 over argmax labels, and
//! the per-outcome improvement analysis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::GameOutcome;
use crate::distributions::{EmotionDistribution, EmotionLabel, NUM_LABELS};

/// Additive smoothing applied to both KLD arguments.
pub const KLD_EPS: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label lists differ in length: {pred} predictions, {truth} truths")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no labels to score")]
    EmptyInput,
    #[error("key sets differ: {0}")]
    KeyMismatch(String),
}

/// Which way round the divergence is taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KldDirection {
    /// D(truth ‖ prediction)
    #[default]
    TruthPred,
    /// D(prediction ‖ truth)
    PredTruth,
}

/// D(truth ‖ pred) in nats, after smoothing both sides with `eps`.
pub fn kld(truth: &EmotionDistribution, pred: &EmotionDistribution, eps: f64) -> f64 {
    let t = truth.smooth(eps);
    let p = pred.smooth(eps);
    let d: f64 = t
        .probs()
        .iter()
        .zip(p.probs())
        .map(|(ti, pi)| ti * (ti / pi).ln())
        .sum();
    // rounding can leave a -1e-17 residue on identical inputs
    d.max(0.0)
}

pub fn kld_directed(truth: &EmotionDistribution, pred: &EmotionDistribution, direction: KldDirection) -> f64 {
    match direction {
        KldDirection::TruthPred => kld(truth, pred, KLD_EPS),
        KldDirection::PredTruth => kld(pred, truth, KLD_EPS),
    }
}

/// Root mean squared difference over the seven components.
pub fn rmse(truth: &EmotionDistribution, pred: &EmotionDistribution) -> f64 {
    let ss: f64 = truth
        .probs()
        .iter()
        .zip(pred.probs())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (ss / NUM_LABELS as f64).sqrt()
}

/// Confusion counts, `matrix[truth][pred]`.
pub fn confusion_matrix(
    pred: &[EmotionLabel],
    truth: &[EmotionLabel],
) -> Result<[[u64; NUM_LABELS]; NUM_LABELS], MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut m = [[0u64; NUM_LABELS]; NUM_LABELS];
    for (p, t) in pred.iter().zip(truth) {
        m[t.index()][p.index()] += 1;
    }
    Ok(m)
}

/// Per-class F1 averaged with weights proportional to each class's support
/// in `truth`. Classes that never occur in `truth` get zero weight; a class
/// with no predicted or no true members has F1 = 0.
pub fn weighted_f1(pred: &[EmotionLabel], truth: &[EmotionLabel]) -> Result<f64, MetricsError> {
    let m = confusion_matrix(pred, truth)?;
    let total = truth.len() as f64;
    let mut score = 0.0;
    for (c, row) in m.iter().enumerate() {
        let support: u64 = row.iter().sum();
        if support == 0 {
            continue;
        }
        let tp = m[c][c] as f64;
        let predicted: u64 = (0..NUM_LABELS).map(|r| m[r][c]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        score += f1 * support as f64 / total;
    }
    Ok(score)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoMetrics {
    pub video_id: String,
    pub kld: f64,
    pub rmse: f64,
    pub truth_label: EmotionLabel,
    pub pred_label: EmotionLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub kld: f64,
    pub rmse: f64,
    pub f1_weighted: f64,
}

/// One method's scores against the human truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub method_name: String,
    /// Sorted by video id.
    pub per_video: Vec<VideoMetrics>,
    pub aggregate: AggregateMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImprovementRow {
    pub outcome: GameOutcome,
    /// Mean KLD of the context-free predictions minus that of the fused
    /// ones; positive means fusion moved predictions toward the truth.
    pub delta_kld: f64,
}

/// Errors with a sample of the differing keys unless both maps share one key set.
pub fn check_keys<A, B>(a: &BTreeMap<String, A>, b: &BTreeMap<String, B>, what: &str) -> Result<(), MetricsError> {
    if a.len() == b.len() && a.keys().eq(b.keys()) {
        return Ok(());
    }
    let only_a: Vec<_> = a.keys().filter(|k| !b.contains_key(*k)).take(5).cloned().collect();
    let only_b: Vec<_> = b.keys().filter(|k| !a.contains_key(*k)).take(5).cloned().collect();
    Err(MetricsError::KeyMismatch(format!(
        "{what}: only in first {only_a:?}, only in second {only_b:?}"
    )))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores one method over every video. Aggregate KLD and RMSE are plain
/// means of the per-video values; F1 uses the argmax labels.
pub fn evaluate_method(
    method_name: &str,
    preds: &BTreeMap<String, EmotionDistribution>,
    truth: &BTreeMap<String, EmotionDistribution>,
    direction: KldDirection,
) -> Result<EvalRow, MetricsError> {
    check_keys(preds, truth, "predictions vs truth")?;
    if truth.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let per_video: Vec<VideoMetrics> = truth
        .iter()
        .map(|(id, t)| {
            let p = &preds[id];
            VideoMetrics {
                video_id: id.clone(),
                kld: kld_directed(t, p, direction),
                rmse: rmse(t, p),
                truth_label: t.argmax(),
                pred_label: p.argmax(),
            }
        })
        .collect();
    let pred_labels: Vec<_> = per_video.iter().map(|v| v.pred_label).collect();
    let truth_labels: Vec<_> = per_video.iter().map(|v| v.truth_label).collect();
    let aggregate = AggregateMetrics {
        kld: mean(per_video.iter().map(|v| v.kld)),
        rmse: mean(per_video.iter().map(|v| v.rmse)),
        f1_weighted: weighted_f1(&pred_labels, &truth_labels)?,
    };
    Ok(EvalRow {
        method_name: method_name.to_string(),
        per_video,
        aggregate,
    })
}

/// Per-outcome change in mean KLD when moving from context-free to fused
/// predictions.
pub fn outcome_improvement(
    context_free: &BTreeMap<String, EmotionDistribution>,
    fused: &BTreeMap<String, EmotionDistribution>,
    truth: &BTreeMap<String, EmotionDistribution>,
    grouping: &BTreeMap<String, GameOutcome>,
    direction: KldDirection,
) -> Result<Vec<ImprovementRow>, MetricsError> {
    check_keys(context_free, truth, "context-free vs truth")?;
    check_keys(fused, truth, "fused vs truth")?;
    if let Some(missing) = truth.keys().find(|k| !grouping.contains_key(*k)) {
        return Err(MetricsError::KeyMismatch(format!("no outcome for video {missing:?}")));
    }
    let mut sums: BTreeMap<GameOutcome, (f64, f64, usize)> = BTreeMap::new();
    for (id, t) in truth {
        let e = sums.entry(grouping[id]).or_default();
        e.0 += kld_directed(t, &context_free[id], direction);
        e.1 += kld_directed(t, &fused[id], direction);
        e.2 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(outcome, (cf, fu, n))| ImprovementRow {
            outcome,
            delta_kld: cf / n as f64 - fu / n as f64,
        })
        .collect())
}
