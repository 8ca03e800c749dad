//! Face-channel providers: per-frame numeric exports of a face model turned
//! into one context-free distribution per video.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DistributionError, EmotionDistribution, EmotionLabel, NUM_LABELS};

/// Bounds of FACET-style evidence values.
pub const EVIDENCE_RANGE: (f64, f64) = (-4.0, 4.0);

/// Allowed deviation of a probability frame's sum from 1.
pub const FRAME_SUM_TOLERANCE: f64 = 1e-6;

pub const FRAME_HEADER: [&str; 9] = [
    "video_id",
    "frame_index",
    "joy",
    "neutral",
    "surprise",
    "anger",
    "disgust",
    "fear",
    "sad",
];

#[derive(Debug, Error)]
pub enum FaceSourceError {
    #[error("expected {expected:?} frames, got {actual:?}")]
    WrongKind { expected: FrameKind, actual: FrameKind },
    #[error("video {video_id}: frame {frame} is invalid: {reason}")]
    InvalidFrame { video_id: String, frame: usize, reason: String },
    #[error("video {0}: no frames")]
    NoFrames(String),
    #[error("{path}: {message}")]
    ParseError { path: String, message: String },
    #[error("{path}: entry {key:?}: {source}")]
    InvariantViolation {
        path: String,
        key: String,
        source: DistributionError,
    },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// How the frame values should be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    /// Signed per-emotion evidence in [-4, 4].
    Evidence,
    /// Per-frame softmax output.
    Probabilities,
}

/// Per-frame output of a face model for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    video_id: String,
    kind: FrameKind,
    frames: Vec<[f64; NUM_LABELS]>,
}

impl FrameSeries {
    pub fn new(
        video_id: impl Into<String>,
        kind: FrameKind,
        frames: Vec<[f64; NUM_LABELS]>,
    ) -> Result<Self, FaceSourceError> {
        let video_id = video_id.into();
        if frames.is_empty() {
            return Err(FaceSourceError::NoFrames(video_id));
        }
        for (i, frame) in frames.iter().enumerate() {
            if let Err(reason) = check_frame(kind, frame) {
                return Err(FaceSourceError::InvalidFrame {
                    video_id,
                    frame: i,
                    reason,
                });
            }
        }
        Ok(Self { video_id, kind, frames })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn frames(&self) -> &[[f64; NUM_LABELS]] {
        &self.frames
    }
}

fn check_frame(kind: FrameKind, frame: &[f64; NUM_LABELS]) -> Result<(), String> {
    if let Some(v) = frame.iter().find(|v| !v.is_finite()) {
        return Err(format!("non-finite value {v}"));
    }
    match kind {
        FrameKind::Evidence => {
            let (lo, hi) = EVIDENCE_RANGE;
            if let Some(v) = frame.iter().find(|v| **v < lo || **v > hi) {
                return Err(format!("evidence {v} outside [{lo}, {hi}]"));
            }
        }
        FrameKind::Probabilities => {
            if let Some(v) = frame.iter().find(|v| **v < 0.0 || **v > 1.0) {
                return Err(format!("probability {v} outside [0, 1]"));
            }
            let sum: f64 = frame.iter().sum();
            if (sum - 1.0).abs() > FRAME_SUM_TOLERANCE {
                return Err(format!("probabilities sum to {sum}"));
            }
        }
    }
    Ok(())
}

/// A converted face distribution. `degenerate` marks a video whose evidence
/// was all non-positive and was replaced by the uniform distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceEstimate {
    pub dist: EmotionDistribution,
    pub degenerate: bool,
}

fn frame_mean(frames: &[[f64; NUM_LABELS]], clamp_negative: bool) -> [f64; NUM_LABELS] {
    let mut acc = [0.0; NUM_LABELS];
    for frame in frames {
        for (a, &v) in acc.iter_mut().zip(frame) {
            *a += if clamp_negative { v.max(0.0) } else { v };
        }
    }
    let n = frames.len() as f64;
    acc.map(|a| a / n)
}

/// Evidence frames: clamp negatives to zero per frame, average over frames,
/// rescale to sum 1.
pub fn facet_to_distribution(fs: &FrameSeries) -> Result<FaceEstimate, FaceSourceError> {
    if fs.kind != FrameKind::Evidence {
        return Err(FaceSourceError::WrongKind {
            expected: FrameKind::Evidence,
            actual: fs.kind,
        });
    }
    let mean = frame_mean(&fs.frames, true);
    Ok(match EmotionDistribution::normalize(&mean) {
        Ok(dist) => FaceEstimate { dist, degenerate: false },
        Err(_) => FaceEstimate {
            dist: EmotionDistribution::uniform(),
            degenerate: true,
        },
    })
}

/// Softmax frames: per-label mean over frames, renormalized.
pub fn softmax_frames_to_distribution(fs: &FrameSeries) -> Result<EmotionDistribution, FaceSourceError> {
    if fs.kind != FrameKind::Probabilities {
        return Err(FaceSourceError::WrongKind {
            expected: FrameKind::Probabilities,
            actual: fs.kind,
        });
    }
    for (i, frame) in fs.frames.iter().enumerate() {
        check_frame(FrameKind::Probabilities, frame).map_err(|reason| FaceSourceError::InvalidFrame {
            video_id: fs.video_id.clone(),
            frame: i,
            reason,
        })?;
    }
    let mean = frame_mean(&fs.frames, false);
    EmotionDistribution::normalize(&mean).map_err(|e| FaceSourceError::InvalidFrame {
        video_id: fs.video_id.clone(),
        frame: 0,
        reason: e.to_string(),
    })
}

/// Dispatches on the series kind.
pub fn convert(fs: &FrameSeries) -> Result<FaceEstimate, FaceSourceError> {
    match fs.kind {
        FrameKind::Evidence => facet_to_distribution(fs),
        FrameKind::Probabilities => Ok(FaceEstimate {
            dist: softmax_frames_to_distribution(fs)?,
            degenerate: false,
        }),
    }
}

/// Reads the frame CSV (`video_id,frame_index,joy,...,sad`). Frames are
/// ordered by `frame_index`; output is sorted by video id.
pub fn parse_frames_csv<R: Read>(
    input: R,
    kind: FrameKind,
    source_name: &str,
) -> Result<Vec<FrameSeries>, FaceSourceError> {
    let parse_err = |message: String| FaceSourceError::ParseError {
        path: source_name.to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = reader.records();
    let header = match rows.next() {
        None => return Err(parse_err("empty file, expected header row".into())),
        Some(h) => h.map_err(|e| parse_err(e.to_string()))?,
    };
    if header.iter().collect::<Vec<_>>() != FRAME_HEADER {
        return Err(parse_err(format!(
            "header {:?} does not match {:?}",
            header.iter().collect::<Vec<_>>().join(","),
            FRAME_HEADER.join(",")
        )));
    }

    let mut by_video: BTreeMap<String, BTreeMap<u64, [f64; NUM_LABELS]>> = BTreeMap::new();
    for row in rows {
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != FRAME_HEADER.len() {
            return Err(parse_err(format!("line {line}: expected 9 fields, found {}", row.len())));
        }
        let index: u64 = row[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("line {line}: bad frame_index {:?}", &row[1])))?;
        let mut values = [0.0; NUM_LABELS];
        for (i, v) in values.iter_mut().enumerate() {
            let field = &row[i + 2];
            *v = field.trim().parse().map_err(|_| {
                parse_err(format!(
                    "line {line}: bad {} value {field:?}",
                    EmotionLabel::ALL[i].as_str()
                ))
            })?;
        }
        let frames = by_video.entry(row[0].to_string()).or_default();
        if frames.insert(index, values).is_some() {
            return Err(parse_err(format!("line {line}: duplicate frame {index} for video {:?}", &row[0])));
        }
    }
    if by_video.is_empty() {
        return Err(parse_err("no frames".into()));
    }
    by_video
        .into_iter()
        .map(|(video, frames)| FrameSeries::new(video, kind, frames.into_values().collect()))
        .collect()
}

/// Loads a `video_id -> distribution` JSON file. Entries within 0.02 of
/// summing to 1 are renormalized; anything else is rejected with its key.
pub fn load_distribution_file(path: &Path) -> Result<BTreeMap<String, EmotionDistribution>, FaceSourceError> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| FaceSourceError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_distribution_map(&text, &shown)
}

/// [`load_distribution_file`] on in-memory text.
pub fn parse_distribution_map(
    text: &str,
    source_name: &str,
) -> Result<BTreeMap<String, EmotionDistribution>, FaceSourceError> {
    let raw: BTreeMap<String, BTreeMap<String, f64>> =
        serde_json::from_str(text).map_err(|e| FaceSourceError::ParseError {
            path: source_name.to_string(),
            message: e.to_string(),
        })?;
    let mut out = BTreeMap::new();
    for (key, fields) in raw {
        let dist = dist_from_fields(&fields).map_err(|source| FaceSourceError::InvariantViolation {
            path: source_name.to_string(),
            key: key.clone(),
            source,
        })?;
        out.insert(key, dist);
    }
    Ok(out)
}

fn dist_from_fields(fields: &BTreeMap<String, f64>) -> Result<EmotionDistribution, DistributionError> {
    if let Some(unknown) = fields.keys().find(|k| k.parse::<EmotionLabel>().is_err()) {
        return Err(DistributionError::BadLabel(unknown.clone()));
    }
    let mut raw = [0.0; NUM_LABELS];
    for label in EmotionLabel::ALL {
        raw[label.index()] = *fields
            .get(label.as_str())
            .ok_or_else(|| DistributionError::BadLabel(format!("missing {}", label.as_str())))?;
    }
    EmotionDistribution::from_probs_tolerant(&raw)
}
