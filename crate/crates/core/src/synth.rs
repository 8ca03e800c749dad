//! Seeded synthetic corpus at study scale: 25 videos per outcome, 20 raters
//! per condition, FACET-style evidence frames and recorded LLM answers, so
//! the whole pipeline can run offline.
//!
//! Faces are mostly smiling regardless of outcome, while the situation pulls
//! the context-based ratings of CD and DD rounds toward negative emotions.
//! Modal counts are drawn so the consensus table comes out at
//! [`CONSENSUS_TARGETS`] exactly.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution, Normal};

use crate::annotations::{Condition, GameOutcome, ANNOTATION_HEADER};
use crate::context::{build_integration_prompt, build_prompt, ReplayFixture};
use crate::distributions::{EmotionDistribution, EmotionLabel, NUM_LABELS};
use crate::facesources::{convert, FrameKind, FrameSeries, FRAME_HEADER};
use crate::fusion::BandTable;
use crate::pipeline::{IntegrationMode, LlmProfile, RunConfig};

/// (condition, outcome, share of videos with a majority, share with a
/// supermajority).
pub const CONSENSUS_TARGETS: [(Condition, GameOutcome, f64, f64); 8] = [
    (Condition::ContextFree, GameOutcome::CC, 0.92, 0.64),
    (Condition::ContextFree, GameOutcome::DC, 0.72, 0.44),
    (Condition::ContextFree, GameOutcome::CD, 0.80, 0.52),
    (Condition::ContextFree, GameOutcome::DD, 0.72, 0.36),
    (Condition::ContextBased, GameOutcome::CC, 0.92, 0.56),
    (Condition::ContextBased, GameOutcome::DC, 0.72, 0.48),
    (Condition::ContextBased, GameOutcome::CD, 0.24, 0.08),
    (Condition::ContextBased, GameOutcome::DD, 0.44, 0.08),
];

/// Mean face-channel distribution per outcome, in label order.
fn face_profile(outcome: GameOutcome) -> [f64; NUM_LABELS] {
    match outcome {
        GameOutcome::CC => [0.62, 0.16, 0.10, 0.02, 0.03, 0.02, 0.05],
        GameOutcome::DC => [0.55, 0.18, 0.11, 0.03, 0.04, 0.04, 0.05],
        GameOutcome::CD => [0.50, 0.18, 0.12, 0.05, 0.05, 0.03, 0.07],
        GameOutcome::DD => [0.48, 0.22, 0.08, 0.06, 0.06, 0.03, 0.07],
    }
}

/// Situation-only emotion distribution per outcome.
fn context_profile(outcome: GameOutcome) -> [f64; NUM_LABELS] {
    match outcome {
        GameOutcome::CC => [0.72, 0.10, 0.12, 0.01, 0.01, 0.02, 0.02],
        GameOutcome::DC => [0.46, 0.10, 0.14, 0.03, 0.07, 0.15, 0.05],
        GameOutcome::CD => [0.02, 0.05, 0.20, 0.29, 0.10, 0.02, 0.32],
        GameOutcome::DD => [0.05, 0.16, 0.10, 0.25, 0.14, 0.05, 0.25],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub videos_per_outcome: usize,
    pub raters: u64,
    pub frames_per_video: usize,
    pub model_name: String,
    /// Answers recorded per prompt; a few extra cover unparseable ones.
    pub llm_samples: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            videos_per_outcome: 25,
            raters: 20,
            frames_per_video: 30,
            model_name: "gpt-4".into(),
            llm_samples: 20,
        }
    }
}

/// Generated files, in memory.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub annotations_csv: String,
    pub frames_csv: String,
    pub replay: ReplayFixture,
    /// BCI run over the files above, relative to their directory.
    pub config: RunConfig,
    /// Same corpus with the LLM doing the integration.
    pub config_llm: RunConfig,
    /// Videos whose frames carry no positive evidence.
    pub degenerate_videos: Vec<String>,
}

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const FRAMES_FILE: &str = "face_frames.csv";
pub const REPLAY_FILE: &str = "replay.json";
pub const CONFIG_FILE: &str = "config.json";
pub const CONFIG_LLM_FILE: &str = "config_llm.json";

pub fn video_id(outcome: GameOutcome, i: usize) -> String {
    format!("{outcome}_{i:02}")
}

#[derive(Clone, Copy)]
enum Consensus {
    Super,
    Majority,
    Neither,
}

fn modal_count(rng: &mut ChaCha8Rng, c: Consensus, raters: u64) -> u64 {
    let sup_min = (2 * raters).div_ceil(3);
    let maj_min = raters / 2 + 1;
    let low = (raters * 7).div_ceil(20).max(raters.div_ceil(NUM_LABELS as u64) + 1);
    match c {
        Consensus::Super => rng.random_range(sup_min..=(sup_min + 4).min(raters)),
        Consensus::Majority => rng.random_range(maj_min..sup_min),
        Consensus::Neither => rng.random_range(low.min(raters / 2)..=raters / 2),
    }
}

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64; NUM_LABELS]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).expect("some positive weight")
}

/// Rating counts whose modal label is the latent argmax with exactly
/// `modal` votes; the rest follow the latent, each held below `modal`.
fn engineered_counts(rng: &mut ChaCha8Rng, latent: &[f64; NUM_LABELS], modal: u64, raters: u64) -> [u64; NUM_LABELS] {
    let top = EmotionDistribution::normalize(latent).expect("latent is positive").argmax().index();
    let mut counts = [0u64; NUM_LABELS];
    counts[top] = modal;
    for _ in modal..raters {
        let mut w = [0.0; NUM_LABELS];
        for i in 0..NUM_LABELS {
            if i != top && counts[i] + 1 < modal {
                w[i] = latent[i].max(1e-3);
            }
        }
        counts[weighted_pick(rng, &w)] += 1;
    }
    counts
}

fn sample_counts(rng: &mut ChaCha8Rng, latent: &[f64; NUM_LABELS], raters: u64) -> [u64; NUM_LABELS] {
    let mut counts = [0u64; NUM_LABELS];
    for _ in 0..raters {
        counts[weighted_pick(rng, latent)] += 1;
    }
    counts
}

fn dirichlet_around(rng: &mut ChaCha8Rng, mean: &[f64; NUM_LABELS], concentration: f64) -> [f64; NUM_LABELS] {
    let alpha = mean.map(|p| (p * concentration).max(0.05));
    Dirichlet::new(alpha).expect("positive alpha").sample(rng)
}

fn product(a: &[f64; NUM_LABELS], b: &[f64; NUM_LABELS]) -> [f64; NUM_LABELS] {
    let mut out = [0.0; NUM_LABELS];
    for i in 0..NUM_LABELS {
        out[i] = a[i] * b[i];
    }
    let s: f64 = out.iter().sum();
    out.map(|v| v / s)
}

/// A model-style answer with three decimals, in one of a few phrasings.
fn llm_answer(p: &[f64; NUM_LABELS], style: usize) -> String {
    let body: Vec<String> = EmotionLabel::ALL
        .iter()
        .map(|l| {
            let v = p[l.index()];
            if style % 5 == 4 {
                format!("{}: {:.1}%", l.display_name(), v * 100.0)
            } else {
                format!("{}: {:.3}", l.display_name(), v)
            }
        })
        .collect();
    let body = body.join(", ");
    match style % 3 {
        0 => format!("{body}."),
        1 => format!("Based on the situation, my estimate is:\n{body}"),
        _ => body,
    }
}

const REFUSAL: &str = "I'm sorry, but I can't determine Player A's emotions from this description alone.";

fn recorded_answers(rng: &mut ChaCha8Rng, mean: &[f64; NUM_LABELS], spec: &SynthSpec, with_refusal: bool) -> Vec<String> {
    (0..spec.llm_samples + 2)
        .map(|i| {
            if with_refusal && i == 3 {
                REFUSAL.to_string()
            } else {
                llm_answer(&dirichlet_around(rng, mean, 150.0), i)
            }
        })
        .collect()
}

fn evidence_frames(rng: &mut ChaCha8Rng, latent: &[f64; NUM_LABELS], n: usize, degenerate: bool) -> Vec<[f64; NUM_LABELS]> {
    let noise = Normal::new(0.0, 0.4).expect("valid normal");
    (0..n)
        .map(|_| {
            let gain = rng.random_range(0.8..1.2);
            let mut frame = [0.0; NUM_LABELS];
            for (i, v) in frame.iter_mut().enumerate() {
                let x = if degenerate {
                    -rng.random_range(0.5..3.5)
                } else {
                    -0.5 + 6.0 * latent[i] * gain + noise.sample(rng)
                };
                // Stored at four decimals; keep the in-memory copy identical.
                *v = format!("{:.4}", x.clamp(-4.0, 4.0)).parse().expect("formatted float");
            }
            frame
        })
        .collect()
}

/// Builds the corpus. Equal specs give identical output.
pub fn generate(spec: &SynthSpec) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.videos_per_outcome;
    let r = spec.raters;
    let bands = BandTable::default();

    let mut face_latent = Vec::new();
    for outcome in GameOutcome::ALL {
        for i in 0..n {
            face_latent.push((outcome, i, dirichlet_around(&mut rng, &face_profile(outcome), 40.0)));
        }
    }

    let mut annotations = ANNOTATION_HEADER.join(",") + "\n";
    for condition in [Condition::ContextFree, Condition::ContextBased] {
        for outcome in GameOutcome::ALL {
            let (_, _, maj, sup) = CONSENSUS_TARGETS
                .iter()
                .find(|t| t.0 == condition && t.1 == outcome)
                .expect("target for every condition/outcome");
            let n_sup = (sup * n as f64).round() as usize;
            let n_maj = (maj * n as f64).round() as usize;
            let mut kinds: Vec<Consensus> = (0..n)
                .map(|i| match i {
                    i if i < n_sup => Consensus::Super,
                    i if i < n_maj => Consensus::Majority,
                    _ => Consensus::Neither,
                })
                .collect();
            kinds.shuffle(&mut rng);
            for (i, kind) in kinds.into_iter().enumerate() {
                let face = &face_latent.iter().find(|f| f.0 == outcome && f.1 == i).expect("latent").2;
                let latent = match condition {
                    Condition::ContextFree => *face,
                    _ => product(face, &context_profile(outcome)),
                };
                let modal = modal_count(&mut rng, kind, r);
                let counts = engineered_counts(&mut rng, &latent, modal, r);
                let mut labels: Vec<EmotionLabel> = EmotionLabel::ALL
                    .iter()
                    .flat_map(|l| std::iter::repeat_n(*l, counts[l.index()] as usize))
                    .collect();
                labels.shuffle(&mut rng);
                let vid = video_id(outcome, i);
                for (k, label) in labels.iter().enumerate() {
                    let _ = writeln!(annotations, "{vid},{outcome},{}_r{k:02},{condition},{label},true", condition_tag(condition));
                }
                if i % 5 == 0 {
                    let label = EmotionLabel::ALL[rng.random_range(0..NUM_LABELS)];
                    let _ = writeln!(annotations, "{vid},{outcome},{}_x{i:02},{condition},{label},false", condition_tag(condition));
                }
            }
        }
    }
    for outcome in GameOutcome::ALL {
        let counts = sample_counts(&mut rng, &context_profile(outcome), r);
        let mut k = 0;
        for l in EmotionLabel::ALL {
            for _ in 0..counts[l.index()] {
                let _ = writeln!(annotations, ",{outcome},co_r{k:02},context_only,{l},true");
                k += 1;
            }
        }
    }

    let mut frames_csv = FRAME_HEADER.join(",") + "\n";
    let mut face_pred = Vec::new();
    let mut degenerate_videos = Vec::new();
    for (outcome, i, latent) in &face_latent {
        let vid = video_id(*outcome, *i);
        let degenerate = *outcome == GameOutcome::DC && *i == 0;
        let frames = evidence_frames(&mut rng, latent, spec.frames_per_video, degenerate);
        for (f, frame) in frames.iter().enumerate() {
            let values: Vec<String> = frame.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(frames_csv, "{vid},{f},{}", values.join(","));
        }
        let series = FrameSeries::new(vid.clone(), FrameKind::Evidence, frames).expect("frames in range");
        let est = convert(&series).expect("evidence conversion");
        if est.degenerate {
            degenerate_videos.push(vid.clone());
        }
        face_pred.push((*outcome, vid, est.dist));
    }

    let mut replay = ReplayFixture::default();
    for outcome in GameOutcome::ALL {
        let answers = recorded_answers(&mut rng, &context_profile(outcome), spec, true);
        replay.push(&spec.model_name, &build_prompt(outcome), answers);
    }
    for (outcome, _, face) in &face_pred {
        let prompt = build_integration_prompt(*outcome, face, &bands).expect("default bands are valid");
        let mean = product(face.probs(), &context_profile(*outcome));
        let answers = recorded_answers(&mut rng, &mean, spec, false);
        replay.push(&spec.model_name, &prompt, answers);
    }

    let profile = LlmProfile {
        model_name: spec.model_name.clone(),
        n_samples: spec.llm_samples,
        temperature: None,
        timeout_secs: 60,
        max_retries: 3,
        max_in_flight: 4,
        retry_backoff_ms: 0,
        provider: None,
    };
    let config = RunConfig {
        annotations: ANNOTATIONS_FILE.into(),
        face_frames: Some(FRAMES_FILE.into()),
        face_source_kind: FrameKind::Evidence,
        face_distributions: None,
        cache_dir: "cache".into(),
        output_dir: "out".into(),
        replay_fixtures: Some(REPLAY_FILE.into()),
        llm_profiles: vec![profile],
        context_source: None,
        fusion: Default::default(),
        integration_mode: IntegrationMode::Bci,
        integration_model: None,
        bands,
        kld_direction: Default::default(),
        offline: true,
        seed: spec.seed,
    };
    let config_llm = RunConfig {
        output_dir: "out_llm".into(),
        integration_mode: IntegrationMode::LlmIntegration,
        ..config.clone()
    };
    SynthCorpus {
        annotations_csv: annotations,
        frames_csv,
        replay,
        config,
        config_llm,
        degenerate_videos,
    }
}

fn condition_tag(c: Condition) -> &'static str {
    match c {
        Condition::ContextFree => "cf",
        Condition::ContextBased => "cb",
        Condition::ContextOnly => "co",
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut body = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
    body.push(b'\n');
    fs::write(path, body)
}

/// Writes the corpus into `dir` and returns the path of the BCI config.
pub fn write_corpus(dir: &Path, spec: &SynthSpec) -> io::Result<PathBuf> {
    let corpus = generate(spec);
    fs::create_dir_all(dir)?;
    fs::write(dir.join(ANNOTATIONS_FILE), &corpus.annotations_csv)?;
    fs::write(dir.join(FRAMES_FILE), &corpus.frames_csv)?;
    write_json(&dir.join(REPLAY_FILE), &corpus.replay)?;
    write_json(&dir.join(CONFIG_LLM_FILE), &corpus.config_llm)?;
    let config = dir.join(CONFIG_FILE);
    write_json(&config, &corpus.config)?;
    Ok(config)
}
