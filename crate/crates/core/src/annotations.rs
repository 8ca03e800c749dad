//! Human rating ingestion, per-video and per-outcome soft labels, and
//! majority / supermajority consensus statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DistributionError, EmotionDistribution, EmotionLabel, NUM_LABELS};

/// Exact header of the annotation CSV.
pub const ANNOTATION_HEADER: [&str; 6] = [
    "video_id",
    "outcome",
    "annotator_id",
    "condition",
    "label",
    "passed_attention",
];

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("line {line}: unknown emotion label {value:?}")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: unknown game outcome {value:?}")]
    BadOutcome { line: u64, value: String },
    #[error("line {line}: unknown condition {value:?}")]
    BadCondition { line: u64, value: String },
    #[error("line {line}: passed_attention must be true or false, got {value:?}")]
    BadFlag { line: u64, value: String },
    #[error("line {line}: {condition} record requires a video_id")]
    MissingVideoId { line: u64, condition: Condition },
    #[error("line {line}: context_only record must not carry a video_id")]
    UnexpectedVideoId { line: u64 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty group")]
    EmptyGroup,
    #[error("mixed group: {0}")]
    MixedGroup(String),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Joint outcome of one prisoner's-dilemma round, from Player A's side.
/// The first letter is Player A's choice, the second Player B's
/// (C = split, D = steal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GameOutcome {
    CC,
    DC,
    CD,
    DD,
}

impl GameOutcome {
    pub const ALL: [GameOutcome; 4] = [GameOutcome::CC, GameOutcome::DC, GameOutcome::CD, GameOutcome::DD];

    pub fn as_str(self) -> &'static str {
        match self {
            GameOutcome::CC => "CC",
            GameOutcome::DC => "DC",
            GameOutcome::CD => "CD",
            GameOutcome::DD => "DD",
        }
    }

    /// Player A's choice, "split" or "steal".
    pub fn player_a_choice(self) -> &'static str {
        match self {
            GameOutcome::CC | GameOutcome::CD => "split",
            GameOutcome::DC | GameOutcome::DD => "steal",
        }
    }

    pub fn player_b_choice(self) -> &'static str {
        match self {
            GameOutcome::CC | GameOutcome::DC => "split",
            GameOutcome::CD | GameOutcome::DD => "steal",
        }
    }
}

impl fmt::Display for GameOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GameOutcome {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// What the rater saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Face only.
    ContextFree,
    /// Face plus the game outcome.
    ContextBased,
    /// Outcome description only, no video.
    ContextOnly,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::ContextFree, Condition::ContextBased, Condition::ContextOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::ContextFree => "context_free",
            Condition::ContextBased => "context_based",
            Condition::ContextOnly => "context_only",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// One rater's single-label judgment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    /// Empty for [`Condition::ContextOnly`].
    pub video_id: String,
    pub outcome: GameOutcome,
    pub annotator_id: String,
    pub condition: Condition,
    pub label: EmotionLabel,
    pub passed_attention: bool,
}

impl AnnotationRecord {
    /// Grouping key. Context-only records share one synthetic video per outcome.
    pub fn group_key(&self) -> String {
        match self.condition {
            Condition::ContextOnly => context_only_video_id(self.outcome),
            _ => self.video_id.clone(),
        }
    }
}

/// Synthetic video id under which context-only ratings of an outcome are pooled.
pub fn context_only_video_id(outcome: GameOutcome) -> String {
    format!("context_only:{outcome}")
}

/// Tallied ratings of one video under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRatings {
    pub video_id: String,
    pub outcome: GameOutcome,
    pub condition: Condition,
    pub counts: [u64; NUM_LABELS],
    pub n: u64,
    pub dist: EmotionDistribution,
}

impl VideoRatings {
    /// Count of the most frequent label.
    pub fn modal_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Strictly more than half of the raters agree.
    pub fn has_majority(&self) -> bool {
        2 * self.modal_count() > self.n
    }

    /// At least two thirds of the raters agree.
    pub fn has_supermajority(&self) -> bool {
        3 * self.modal_count() >= 2 * self.n
    }
}

/// Reads the annotation CSV. Line numbers in errors are 1-based file lines.
pub fn parse_annotations<R: Read>(input: R) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = reader.records();

    let header = match rows.next() {
        None => return Err(AnnotationError::SchemaError("empty input, expected header row".into())),
        Some(h) => h?,
    };
    let header: Vec<&str> = header.iter().collect();
    if header != ANNOTATION_HEADER {
        return Err(AnnotationError::SchemaError(format!(
            "header {:?} does not match {:?}",
            header.join(","),
            ANNOTATION_HEADER.join(",")
        )));
    }

    let mut out = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != ANNOTATION_HEADER.len() {
            return Err(AnnotationError::SchemaError(format!(
                "line {line}: expected {} fields, found {}",
                ANNOTATION_HEADER.len(),
                row.len()
            )));
        }
        let outcome = row[1]
            .parse::<GameOutcome>()
            .map_err(|value| AnnotationError::BadOutcome { line, value })?;
        let condition = row[3]
            .parse::<Condition>()
            .map_err(|value| AnnotationError::BadCondition { line, value })?;
        let label = row[4].parse::<EmotionLabel>().map_err(|_| AnnotationError::BadLabel {
            line,
            value: row[4].to_string(),
        })?;
        let passed_attention = match &row[5] {
            "true" => true,
            "false" => false,
            other => {
                return Err(AnnotationError::BadFlag {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let video_id = row[0].to_string();
        match (condition, video_id.is_empty()) {
            (Condition::ContextOnly, false) => return Err(AnnotationError::UnexpectedVideoId { line }),
            (Condition::ContextFree | Condition::ContextBased, true) => {
                return Err(AnnotationError::MissingVideoId { line, condition })
            }
            _ => {}
        }
        out.push(AnnotationRecord {
            video_id,
            outcome,
            annotator_id: row[2].to_string(),
            condition,
            label,
            passed_attention,
        });
    }
    Ok(out)
}

/// Drops records from raters who failed the attention check.
pub fn filter_attention(records: Vec<AnnotationRecord>) -> Vec<AnnotationRecord> {
    records.into_iter().filter(|r| r.passed_attention).collect()
}

/// Tallies the records of one (video, condition) group.
pub fn aggregate_video(records: &[AnnotationRecord]) -> Result<VideoRatings, AnnotationError> {
    let first = records.first().ok_or(AnnotationError::EmptyGroup)?;
    let key = first.group_key();
    let mut counts = [0u64; NUM_LABELS];
    for r in records {
        if r.group_key() != key || r.outcome != first.outcome || r.condition != first.condition {
            return Err(AnnotationError::MixedGroup(format!(
                "record ({}, {}, {}) in group ({}, {}, {})",
                r.group_key(),
                r.outcome,
                r.condition,
                key,
                first.outcome,
                first.condition
            )));
        }
        counts[r.label.index()] += 1;
    }
    let dist = EmotionDistribution::from_counts(&counts)?;
    Ok(VideoRatings {
        video_id: key,
        outcome: first.outcome,
        condition: first.condition,
        counts,
        n: records.len() as u64,
        dist,
    })
}

/// Groups records by (condition, video) and tallies each group. Output is
/// sorted by (condition, outcome, video_id).
pub fn aggregate_all(records: &[AnnotationRecord]) -> Result<Vec<VideoRatings>, AnnotationError> {
    let mut groups: BTreeMap<(Condition, String), Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.condition, r.group_key())).or_default().push(r.clone());
    }
    let mut videos = groups
        .values()
        .map(|g| aggregate_video(g))
        .collect::<Result<Vec<_>, _>>()?;
    videos.sort_by(|a, b| {
        (a.condition, a.outcome, &a.video_id).cmp(&(b.condition, b.outcome, &b.video_id))
    });
    Ok(videos)
}

/// Consensus fractions for one outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusRow {
    pub n_videos: usize,
    pub n_majority: usize,
    pub n_supermajority: usize,
    pub pct_majority: f64,
    pub pct_supermajority: f64,
}

/// Per-outcome share of videos with a strict majority (> 1/2) and a
/// supermajority (>= 2/3) on their modal label. Thresholds are compared in
/// integer arithmetic.
pub fn consensus_stats(videos: &[VideoRatings]) -> Result<BTreeMap<GameOutcome, ConsensusRow>, AnnotationError> {
    if videos.is_empty() {
        return Err(AnnotationError::EmptyGroup);
    }
    let mut tallies: BTreeMap<GameOutcome, (usize, usize, usize)> = BTreeMap::new();
    for v in videos {
        let t = tallies.entry(v.outcome).or_default();
        t.0 += 1;
        t.1 += v.has_majority() as usize;
        t.2 += v.has_supermajority() as usize;
    }
    Ok(tallies
        .into_iter()
        .map(|(outcome, (n, maj, sup))| {
            (
                outcome,
                ConsensusRow {
                    n_videos: n,
                    n_majority: maj,
                    n_supermajority: sup,
                    pct_majority: maj as f64 / n as f64,
                    pct_supermajority: sup as f64 / n as f64,
                },
            )
        })
        .collect())
}

/// Unweighted mean of the per-video distributions of one outcome and condition.
pub fn aggregate_outcome(videos: &[VideoRatings]) -> Result<EmotionDistribution, AnnotationError> {
    let first = videos.first().ok_or(AnnotationError::EmptyGroup)?;
    if let Some(v) = videos
        .iter()
        .find(|v| v.outcome != first.outcome || v.condition != first.condition)
    {
        return Err(AnnotationError::MixedGroup(format!(
            "video {} is ({}, {}), expected ({}, {})",
            v.video_id, v.outcome, v.condition, first.outcome, first.condition
        )));
    }
    Ok(EmotionDistribution::mean(videos.iter().map(|v| &v.dist))?)
}
