use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{IntegrationMode, LlmProfile, LoadedConfig, HUMAN_CONTEXT};
use super::manifest::{digest_bytes, digest_file, RunManifest};
use super::{PipelineError, RunLock};
use crate::annotations::{
    aggregate_all, aggregate_outcome, consensus_stats, filter_attention, parse_annotations, AnnotationError,
    Condition, GameOutcome, VideoRatings,
};
use crate::context::cache::model_dir_name;
use crate::context::{
    query_context_distribution, query_integrated_distribution, ChatClient, HttpChatClient, ReplayClient,
    ReplayFixture,
};
use crate::distributions::EmotionDistribution;
use crate::facesources::{convert, load_distribution_file, parse_frames_csv};
use crate::fusion::bci_fuse;
use crate::metrics::{check_keys, evaluate_method, outcome_improvement, EvalRow, ImprovementRow, KldDirection};

pub const HUMAN_CONTEXT_FREE_FILE: &str = "human_context_free.json";
pub const HUMAN_CONTEXT_BASED_FILE: &str = "human_context_based.json";
pub const HUMAN_CONTEXT_ONLY_FILE: &str = "human_context_only.json";
pub const OUTCOME_MEANS_FILE: &str = "human_outcome_means.json";
pub const VIDEO_OUTCOMES_FILE: &str = "video_outcomes.json";
pub const CONSENSUS_FILE: &str = "consensus.csv";
pub const FACE_FILE: &str = "face.json";
pub const FUSED_BCI_FILE: &str = "fused_bci.json";
pub const FUSED_LLM_FILE: &str = "fused_llm.json";
pub const EVAL_METHODS_FILE: &str = "eval_methods.csv";
pub const EVAL_PER_VIDEO_FILE: &str = "eval_per_video.csv";
pub const EVAL_CONTEXT_FILE: &str = "eval_context.csv";
pub const IMPROVEMENT_FILE: &str = "improvement.csv";
pub const SUMMARY_FILE: &str = "summary.md";

pub const FACE_METHOD: &str = "face (context-free)";
pub const HUMAN_CF_METHOD: &str = "human context-free";
pub const HUMAN_BCI_METHOD: &str = "human BCI";

/// `context_<model>.json` for a profile.
pub fn context_file_name(model: &str) -> String {
    format!("context_{}.json", model_dir_name(model))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Aggregate,
    Face,
    Context,
    Fuse,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Aggregate, Stage::Face, Stage::Context, Stage::Fuse, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Aggregate => "aggregate",
            Stage::Face => "face",
            Stage::Context => "context",
            Stage::Fuse => "fuse",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Default)]
struct StageOutput {
    files: Vec<(String, Vec<u8>)>,
    inputs: Vec<(String, String)>,
    degenerate: Option<Vec<String>>,
}

impl StageOutput {
    fn json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) {
        let mut body = serde_json::to_vec_pretty(value).expect("stage output serializes");
        body.push(b'\n');
        self.files.push((name.into(), body));
    }

    fn text(&mut self, name: impl Into<String>, body: String) {
        self.files.push((name.into(), body.into_bytes()));
    }
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

/// Runs stages for one config.
pub struct Pipeline {
    cfg: LoadedConfig,
    offline: bool,
    client: Option<Arc<dyn ChatClient>>,
}

impl Pipeline {
    /// `offline` forces offline mode on top of the config's own flag.
    pub fn new(cfg: LoadedConfig, offline: bool) -> Self {
        let offline = offline || cfg.config.offline;
        Self {
            cfg,
            offline,
            client: None,
        }
    }

    /// Uses `client` for every model instead of building one from the config.
    pub fn with_client(mut self, client: Arc<dyn ChatClient>) -> Self {
        self.client = Some(client);
        self
    }

    pub fn config(&self) -> &LoadedConfig {
        &self.cfg
    }

    pub fn output_dir(&self) -> PathBuf {
        self.cfg.output_dir()
    }

    /// Runs `stages` in order under the output-directory lock.
    pub fn run(&self, stages: &[Stage]) -> Result<(), PipelineError> {
        let _lock = RunLock::acquire(&self.output_dir())?;
        for &stage in stages {
            log::info!("stage {}", stage.name());
            let out = match stage {
                Stage::Aggregate => self.aggregate()?,
                Stage::Face => self.face()?,
                Stage::Context => self.context()?,
                Stage::Fuse => self.fuse()?,
                Stage::Eval => self.eval()?,
            };
            self.commit(stage, out)?;
        }
        Ok(())
    }

    pub fn run_all(&self) -> Result<(), PipelineError> {
        self.run(&Stage::ALL)
    }

    fn commit(&self, stage: Stage, out: StageOutput) -> Result<(), PipelineError> {
        let dir = self.output_dir();
        let mut digests = BTreeMap::new();
        for (name, body) in &out.files {
            let path = dir.join(name);
            let tmp = dir.join(format!(".{name}.tmp"));
            fs::write(&tmp, body).map_err(|e| PipelineError::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| PipelineError::io(&path, e))?;
            digests.insert(name.clone(), digest_bytes(body));
        }
        let mut manifest = RunManifest::open(&dir, &self.cfg.config_hash);
        manifest.inputs.extend(out.inputs);
        manifest.record_stage(stage.name(), digests);
        if let Some(d) = out.degenerate {
            manifest.degenerate_sources = d;
        }
        manifest.write(&dir)
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.output_dir().join(name)
    }

    fn input_digest(&self, rel: &Path) -> Result<(String, String), PipelineError> {
        Ok((rel.display().to_string(), digest_file(&self.cfg.resolve(rel))?))
    }

    fn open_input(&self, rel: &Path, hint: &str) -> Result<(PathBuf, fs::File), PipelineError> {
        let path = self.cfg.resolve(rel);
        match fs::File::open(&path) {
            Ok(f) => Ok((path, f)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(PipelineError::MissingInput {
                path,
                hint: hint.to_string(),
            }),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }

    /// Loads and validates a distribution map written by an earlier stage.
    fn load_stage_file(&self, name: &str, produced_by: Stage) -> Result<BTreeMap<String, EmotionDistribution>, PipelineError> {
        let path = self.out_path(name);
        if !path.exists() {
            return Err(PipelineError::MissingInput {
                path,
                hint: format!("run `cuefuse {}` first", produced_by.name()),
            });
        }
        Ok(load_distribution_file(&path)?)
    }

    fn load_outcome_keyed(&self, name: &str, produced_by: Stage) -> Result<BTreeMap<GameOutcome, EmotionDistribution>, PipelineError> {
        let path = self.out_path(name);
        self.load_stage_file(name, produced_by)?
            .into_iter()
            .map(|(k, d)| {
                k.parse::<GameOutcome>()
                    .map(|o| (o, d))
                    .map_err(|bad| PipelineError::BadInput {
                        path: path.clone(),
                        message: format!("unknown outcome key {bad:?}"),
                    })
            })
            .collect()
    }

    fn load_video_outcomes(&self) -> Result<BTreeMap<String, GameOutcome>, PipelineError> {
        let path = self.out_path(VIDEO_OUTCOMES_FILE);
        if !path.exists() {
            return Err(PipelineError::MissingInput {
                path,
                hint: "run `cuefuse aggregate` first".into(),
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::BadInput {
            path,
            message: e.to_string(),
        })
    }

    fn clients(&self, profiles: &[&LlmProfile]) -> Result<Vec<Arc<dyn ChatClient>>, PipelineError> {
        if let Some(c) = &self.client {
            return Ok(vec![c.clone(); profiles.len()]);
        }
        if self.offline {
            let fixture = match &self.cfg.config.replay_fixtures {
                Some(rel) => {
                    let path = self.cfg.resolve(rel);
                    ReplayFixture::load(&path).map_err(|message| PipelineError::BadInput { path, message })?
                }
                None => ReplayFixture::default(),
            };
            let c: Arc<dyn ChatClient> = Arc::new(ReplayClient::new(fixture));
            return Ok(vec![c; profiles.len()]);
        }
        let key = std::env::var("LLM_API_KEY")
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| PipelineError::Config("LLM_API_KEY is not set (use --offline to run from cache and replay fixtures)".into()))?;
        profiles
            .iter()
            .map(|p| {
                let provider = p
                    .provider
                    .clone()
                    .ok_or_else(|| PipelineError::Config(format!("profile {} has no provider for live mode", p.model_name)))?;
                let c: Arc<dyn ChatClient> =
                    Arc::new(HttpChatClient::new(provider, key.clone(), Duration::from_secs(p.timeout_secs)));
                Ok(c)
            })
            .collect()
    }

    fn replay_input(&self, out: &mut StageOutput) -> Result<(), PipelineError> {
        if self.offline && self.client.is_none() {
            if let Some(rel) = &self.cfg.config.replay_fixtures {
                out.inputs.push(self.input_digest(rel)?);
            }
        }
        Ok(())
    }

    fn aggregate(&self) -> Result<StageOutput, PipelineError> {
        let rel = &self.cfg.config.annotations;
        let (path, file) = self.open_input(rel, "annotations CSV")?;
        let ann = |source: AnnotationError| PipelineError::Annotations {
            path: path.clone(),
            source,
        };
        let records = parse_annotations(BufReader::new(file)).map_err(ann)?;
        let total = records.len();
        let kept = filter_attention(records);
        log::info!("{} of {total} ratings passed the attention check", kept.len());
        if kept.is_empty() {
            return Err(ann(AnnotationError::EmptyGroup));
        }
        let videos = aggregate_all(&kept).map_err(ann)?;

        let mut out = StageOutput::default();
        out.inputs.push(self.input_digest(rel)?);

        let mut video_outcomes: BTreeMap<String, GameOutcome> = BTreeMap::new();
        let mut outcome_means: BTreeMap<&str, BTreeMap<&str, EmotionDistribution>> = BTreeMap::new();
        let mut consensus_rows = Vec::new();
        for condition in Condition::ALL {
            let group: Vec<VideoRatings> = videos.iter().filter(|v| v.condition == condition).cloned().collect();
            if group.is_empty() {
                continue;
            }
            let mut by_outcome: BTreeMap<GameOutcome, Vec<VideoRatings>> = BTreeMap::new();
            for v in &group {
                by_outcome.entry(v.outcome).or_default().push(v.clone());
            }
            let means = outcome_means.entry(condition.as_str()).or_default();
            for (outcome, vs) in &by_outcome {
                means.insert(outcome.as_str(), aggregate_outcome(vs).map_err(ann)?);
            }
            if condition == Condition::ContextOnly {
                let by_key: BTreeMap<&str, &EmotionDistribution> =
                    group.iter().map(|v| (v.outcome.as_str(), &v.dist)).collect();
                out.json(HUMAN_CONTEXT_ONLY_FILE, &by_key);
                continue;
            }
            for v in &group {
                if let Some(prev) = video_outcomes.insert(v.video_id.clone(), v.outcome) {
                    if prev != v.outcome {
                        return Err(PipelineError::BadInput {
                            path: path.clone(),
                            message: format!("video {} is rated under outcomes {prev} and {}", v.video_id, v.outcome),
                        });
                    }
                }
            }
            let by_video: BTreeMap<&str, &EmotionDistribution> =
                group.iter().map(|v| (v.video_id.as_str(), &v.dist)).collect();
            let name = match condition {
                Condition::ContextFree => HUMAN_CONTEXT_FREE_FILE,
                _ => HUMAN_CONTEXT_BASED_FILE,
            };
            out.json(name, &by_video);
            for (outcome, row) in consensus_stats(&group).map_err(ann)? {
                consensus_rows.push(vec![
                    condition.as_str().to_string(),
                    outcome.as_str().to_string(),
                    row.pct_majority.to_string(),
                    row.pct_supermajority.to_string(),
                ]);
            }
        }
        let video_outcomes: BTreeMap<&str, &str> =
            video_outcomes.iter().map(|(k, o)| (k.as_str(), o.as_str())).collect();
        out.json(VIDEO_OUTCOMES_FILE, &video_outcomes);
        out.json(OUTCOME_MEANS_FILE, &outcome_means);
        out.text(
            CONSENSUS_FILE,
            csv_bytes(&["condition", "outcome", "pct_majority", "pct_supermajority"], consensus_rows),
        );
        Ok(out)
    }

    fn face(&self) -> Result<StageOutput, PipelineError> {
        let c = &self.cfg.config;
        let mut out = StageOutput::default();
        let (dists, degenerate) = if let Some(rel) = &c.face_distributions {
            let dists = load_distribution_file(&self.cfg.resolve(rel))?;
            out.inputs.push(self.input_digest(rel)?);
            (dists, Vec::new())
        } else if let Some(rel) = &c.face_frames {
            let (path, file) = self.open_input(rel, "face frame CSV")?;
            let series = parse_frames_csv(BufReader::new(file), c.face_source_kind, &path.display().to_string())?;
            let estimates = series
                .par_iter()
                .map(|s| convert(s).map(|e| (s.video_id().to_string(), e)))
                .collect::<Result<Vec<_>, _>>()?;
            out.inputs.push(self.input_digest(rel)?);
            let degenerate: Vec<String> = estimates
                .iter()
                .filter(|(_, e)| e.degenerate)
                .map(|(id, _)| id.clone())
                .collect();
            for id in &degenerate {
                log::warn!("video {id}: no positive face evidence, using uniform");
            }
            (estimates.into_iter().map(|(id, e)| (id, e.dist)).collect(), degenerate)
        } else {
            return Err(PipelineError::Config(
                "face stage needs face_frames or face_distributions".into(),
            ));
        };
        out.json(FACE_FILE, &dists);
        out.degenerate = Some(degenerate);
        Ok(out)
    }

    fn context(&self) -> Result<StageOutput, PipelineError> {
        let mut out = StageOutput::default();
        let profiles: Vec<&LlmProfile> = self.cfg.config.llm_profiles.iter().collect();
        if profiles.is_empty() {
            log::info!("no llm profiles configured; context stage has nothing to do");
            return Ok(out);
        }
        let clients = self.clients(&profiles)?;
        let cache_dir = self.cfg.cache_dir();
        for (profile, client) in profiles.iter().zip(&clients) {
            let qcfg = profile.query_config(&cache_dir);
            let mut by_outcome = BTreeMap::new();
            for outcome in GameOutcome::ALL {
                let r = query_context_distribution(outcome, &qcfg, client.as_ref())?;
                log::info!(
                    "{} {outcome}: {} samples, {} rejected, {} requests",
                    profile.model_name,
                    r.samples.len(),
                    r.rejected.len(),
                    r.client_calls
                );
                by_outcome.insert(outcome.as_str(), r.distribution);
            }
            out.json(context_file_name(&profile.model_name), &by_outcome);
        }
        self.replay_input(&mut out)?;
        Ok(out)
    }

    /// Context channel for BCI fusion, keyed by outcome.
    fn context_channel(&self) -> Result<BTreeMap<GameOutcome, EmotionDistribution>, PipelineError> {
        let source = self.cfg.context_source();
        if source == HUMAN_CONTEXT {
            self.load_outcome_keyed(HUMAN_CONTEXT_ONLY_FILE, Stage::Aggregate)
        } else {
            self.load_outcome_keyed(&context_file_name(&source), Stage::Context)
        }
    }

    fn fused_file_and_method(&self) -> Result<(&'static str, String), PipelineError> {
        Ok(match self.cfg.config.integration_mode {
            IntegrationMode::Bci => (FUSED_BCI_FILE, format!("face+{} (BCI)", self.cfg.context_source())),
            IntegrationMode::LlmIntegration => (
                FUSED_LLM_FILE,
                format!("face+{} (LLM integration)", self.cfg.integration_profile()?.model_name),
            ),
        })
    }

    fn fuse(&self) -> Result<StageOutput, PipelineError> {
        let face = self.load_stage_file(FACE_FILE, Stage::Face)?;
        let outcomes = self.load_video_outcomes()?;
        check_keys(&face, &outcomes, "face file vs video outcomes")?;
        let mut out = StageOutput::default();
        let (file, _) = self.fused_file_and_method()?;
        let fused = match self.cfg.config.integration_mode {
            IntegrationMode::Bci => {
                let context = self.context_channel()?;
                bci_by_video(&face, &outcomes, &context, &self.cfg)?
            }
            IntegrationMode::LlmIntegration => {
                let profile = self.cfg.integration_profile()?;
                let client = self.clients(&[profile])?.remove(0);
                let qcfg = profile.query_config(&self.cfg.cache_dir());
                let mut fused = BTreeMap::new();
                for (id, f) in &face {
                    let r = query_integrated_distribution(outcomes[id], f, &self.cfg.config.bands, &qcfg, client.as_ref())?;
                    fused.insert(id.clone(), r.distribution);
                }
                self.replay_input(&mut out)?;
                fused
            }
        };
        out.json(file, &fused);
        Ok(out)
    }

    fn eval(&self) -> Result<StageOutput, PipelineError> {
        let direction = self.cfg.config.kld_direction;
        let truth = self.load_stage_file(HUMAN_CONTEXT_BASED_FILE, Stage::Aggregate)?;
        let outcomes = self.load_video_outcomes()?;
        let face = self.load_stage_file(FACE_FILE, Stage::Face)?;
        let (fused_file, fused_method) = self.fused_file_and_method()?;
        let fused = self.load_stage_file(fused_file, Stage::Fuse)?;

        let mut methods: Vec<(String, BTreeMap<String, EmotionDistribution>)> = vec![(FACE_METHOD.into(), face.clone())];
        let mut improvements: Vec<(String, Vec<ImprovementRow>)> = vec![(
            fused_method.clone(),
            outcome_improvement(&face, &fused, &truth, &outcomes, direction)?,
        )];
        if self.out_path(HUMAN_CONTEXT_FREE_FILE).exists() {
            let human_cf = self.load_stage_file(HUMAN_CONTEXT_FREE_FILE, Stage::Aggregate)?;
            methods.push((HUMAN_CF_METHOD.into(), human_cf.clone()));
            if self.out_path(HUMAN_CONTEXT_ONLY_FILE).exists() {
                let ctx = self.load_outcome_keyed(HUMAN_CONTEXT_ONLY_FILE, Stage::Aggregate)?;
                let human_bci = bci_by_video(&human_cf, &outcomes, &ctx, &self.cfg)?;
                improvements.push((
                    HUMAN_BCI_METHOD.into(),
                    outcome_improvement(&human_cf, &human_bci, &truth, &outcomes, direction)?,
                ));
                methods.push((HUMAN_BCI_METHOD.into(), human_bci));
            }
        }
        methods.push((fused_method, fused));

        let rows = methods
            .iter()
            .map(|(name, preds)| evaluate_method(name, preds, &truth, direction))
            .collect::<Result<Vec<_>, _>>()?;
        let context_rows = self.context_eval(direction)?;

        let mut out = StageOutput::default();
        out.text(EVAL_METHODS_FILE, methods_csv(&rows));
        out.text(EVAL_CONTEXT_FILE, methods_csv(&context_rows));
        out.text(EVAL_PER_VIDEO_FILE, per_video_csv(&rows, &outcomes));
        out.text(IMPROVEMENT_FILE, improvement_csv(&improvements));
        out.text(
            SUMMARY_FILE,
            summary_md(&rows, &context_rows, &improvements, truth.len(), direction),
        );
        Ok(out)
    }

    /// Scores each model's context channel against the human context-only
    /// ratings, one entry per outcome.
    fn context_eval(&self, direction: KldDirection) -> Result<Vec<EvalRow>, PipelineError> {
        if !self.out_path(HUMAN_CONTEXT_ONLY_FILE).exists() {
            return Ok(Vec::new());
        }
        let human = self.load_stage_file(HUMAN_CONTEXT_ONLY_FILE, Stage::Aggregate)?;
        let mut rows = Vec::new();
        for p in &self.cfg.config.llm_profiles {
            let name = context_file_name(&p.model_name);
            if !self.out_path(&name).exists() {
                continue;
            }
            let model = self.load_stage_file(&name, Stage::Context)?;
            rows.push(evaluate_method(&p.model_name, &model, &human, direction)?);
        }
        Ok(rows)
    }
}

/// BCI fusion of every video with its outcome's context distribution.
fn bci_by_video(
    face: &BTreeMap<String, EmotionDistribution>,
    outcomes: &BTreeMap<String, GameOutcome>,
    context: &BTreeMap<GameOutcome, EmotionDistribution>,
    cfg: &LoadedConfig,
) -> Result<BTreeMap<String, EmotionDistribution>, PipelineError> {
    let entries: Vec<(&String, &EmotionDistribution)> = face.iter().collect();
    entries
        .par_iter()
        .map(|(id, f)| {
            let outcome = outcomes.get(*id).ok_or_else(|| {
                PipelineError::Metrics(crate::metrics::MetricsError::KeyMismatch(format!("no outcome for video {id:?}")))
            })?;
            let c = context.get(outcome).ok_or_else(|| PipelineError::MissingInput {
                path: PathBuf::from(cfg.context_source()),
                hint: format!("context channel has no distribution for outcome {outcome}"),
            })?;
            Ok(((*id).clone(), bci_fuse(f, c, &cfg.config.fusion)?))
        })
        .collect::<Result<Vec<_>, PipelineError>>()
        .map(|v| v.into_iter().collect())
}

fn methods_csv(rows: &[EvalRow]) -> String {
    csv_bytes(
        &["method", "kld", "rmse", "f1"],
        rows.iter()
            .map(|r| {
                vec![
                    r.method_name.clone(),
                    r.aggregate.kld.to_string(),
                    r.aggregate.rmse.to_string(),
                    r.aggregate.f1_weighted.to_string(),
                ]
            })
            .collect(),
    )
}

fn per_video_csv(rows: &[EvalRow], outcomes: &BTreeMap<String, GameOutcome>) -> String {
    let mut out = Vec::new();
    for r in rows {
        for v in &r.per_video {
            out.push(vec![
                r.method_name.clone(),
                v.video_id.clone(),
                outcomes.get(&v.video_id).map(|o| o.as_str()).unwrap_or("").to_string(),
                v.kld.to_string(),
                v.rmse.to_string(),
                v.truth_label.as_str().to_string(),
                v.pred_label.as_str().to_string(),
            ]);
        }
    }
    csv_bytes(
        &["method", "video_id", "outcome", "kld", "rmse", "truth_label", "pred_label"],
        out,
    )
}

fn improvement_csv(improvements: &[(String, Vec<ImprovementRow>)]) -> String {
    let rows = improvements
        .iter()
        .flat_map(|(method, rows)| {
            rows.iter()
                .map(move |r| vec![method.clone(), r.outcome.as_str().to_string(), r.delta_kld.to_string()])
        })
        .collect();
    csv_bytes(&["method", "outcome", "delta_kld"], rows)
}

fn summary_md(
    rows: &[EvalRow],
    context_rows: &[EvalRow],
    improvements: &[(String, Vec<ImprovementRow>)],
    n_videos: usize,
    direction: KldDirection,
) -> String {
    let dir = match direction {
        KldDirection::TruthPred => "D(truth || prediction)",
        KldDirection::PredTruth => "D(prediction || truth)",
    };
    let mut s = String::new();
    let _ = writeln!(s, "# Evaluation summary\n");
    let _ = writeln!(
        s,
        "Truth: human context-based ratings over {n_videos} videos. KLD is {dir}, natural log.\n"
    );
    let _ = writeln!(s, "| Method | KLD | RMSE | F1 |\n|---|---|---|---|");
    for r in rows {
        let a = r.aggregate;
        let _ = writeln!(s, "| {} | {:.3} | {:.3} | {:.3} |", r.method_name, a.kld, a.rmse, a.f1_weighted);
    }
    if !context_rows.is_empty() {
        let _ = writeln!(s, "\n## Context channel vs human context-only ratings\n");
        let _ = writeln!(s, "| Model | KLD | RMSE | F1 |\n|---|---|---|---|");
        for r in context_rows {
            let a = r.aggregate;
            let _ = writeln!(s, "| {} | {:.3} | {:.3} | {:.3} |", r.method_name, a.kld, a.rmse, a.f1_weighted);
        }
    }
    let _ = writeln!(s, "\n## KLD improvement by outcome\n");
    let _ = writeln!(s, "Mean KLD without context minus mean KLD with it; positive is better.\n");
    let _ = writeln!(s, "| Method | CC | DC | CD | DD |\n|---|---|---|---|---|");
    for (method, imp) in improvements {
        let cell = |o: GameOutcome| {
            imp.iter()
                .find(|r| r.outcome == o)
                .map(|r| format!("{:+.3}", r.delta_kld))
                .unwrap_or_else(|| "-".into())
        };
        let _ = writeln!(
            s,
            "| {method} | {} | {} | {} | {} |",
            cell(GameOutcome::CC),
            cell(GameOutcome::DC),
            cell(GameOutcome::CD),
            cell(GameOutcome::DD)
        );
    }
    s
}
