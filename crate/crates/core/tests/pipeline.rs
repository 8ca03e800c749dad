use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use cuefuse::context::{format_answer, CountingClient, ReplayClient, ReplayFixture};
use cuefuse::distributions::{EmotionDistribution, EmotionLabel};
use cuefuse::facesources::load_distribution_file;
use cuefuse::fusion::{bci_fuse, FusionConfig};
use cuefuse::pipeline::{LoadedConfig, Pipeline, PipelineError, RunConfig, Stage, LOCK_FILE};
use cuefuse::synth::{write_corpus, SynthSpec};
use cuefuse::GameOutcome;
use tempfile::TempDir;

const HEADER: &str = "video_id,outcome,annotator_id,condition,label,passed_attention\n";

fn dist(raw: [f64; 7]) -> EmotionDistribution {
    EmotionDistribution::normalize(&raw).unwrap()
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn load_config(dir: &Path, json: serde_json::Value) -> LoadedConfig {
    let path = dir.join("config.json");
    fs::write(&path, json.to_string()).unwrap();
    LoadedConfig::load(&path).unwrap()
}

/// Two CD videos with hand-picked face distributions, human ratings for
/// each condition, and context-only ratings for CD.
fn two_video_dir(context_only_rows: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = HEADER.to_string();
    for (vid, labels) in [("v1", ["joy", "joy", "sad", "sad"]), ("v2", ["anger", "sad", "sad", "sad"])] {
        for (k, l) in labels.iter().enumerate() {
            csv += &format!("{vid},CD,cb{k},context_based,{l},true\n");
            csv += &format!("{vid},CD,cf{k},context_free,joy,true\n");
        }
    }
    csv += context_only_rows;
    fs::write(dir.path().join("ann.csv"), csv).unwrap();
    let face: BTreeMap<&str, EmotionDistribution> = [
        ("v1", dist([0.6, 0.0, 0.4, 0.0, 0.0, 0.0, 0.0])),
        ("v2", dist([0.5, 0.1, 0.1, 0.1, 0.0, 0.0, 0.2])),
    ]
    .into_iter()
    .collect();
    write_json(&dir.path().join("face.json"), &face);
    dir
}

fn human_context_config(dir: &Path) -> LoadedConfig {
    load_config(
        dir,
        serde_json::json!({
            "annotations": "ann.csv",
            "face_distributions": "face.json",
            "output_dir": "out",
            "context_source": "human"
        }),
    )
}

fn read_map(path: &Path) -> BTreeMap<String, EmotionDistribution> {
    load_distribution_file(path).unwrap()
}

#[test]
fn fuse_from_files_equals_library_composition() {
    let rows = ",CD,c1,context_only,sad,true\n,CD,c2,context_only,sad,true\n,CD,c3,context_only,surprise,true\n,CD,c4,context_only,joy,true\n";
    let dir = two_video_dir(rows);
    let cfg = human_context_config(dir.path());
    Pipeline::new(cfg, true)
        .run(&[Stage::Aggregate, Stage::Face, Stage::Fuse])
        .unwrap();
    let out = dir.path().join("out");
    let fused = read_map(&out.join("fused_bci.json"));

    let face = read_map(&dir.path().join("face.json"));
    let context = dist([1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
    for (id, f) in &face {
        let direct = bci_fuse(f, &context, &FusionConfig::default()).unwrap();
        for (a, b) in direct.probs().iter().zip(fused[id].probs()) {
            assert!((a - b).abs() <= 1e-15, "{id}: {a} vs {b}");
        }
    }

    // Hand product for v1: (0.6*0.25, 0.4*0.25) -> (0.6, 0.4).
    let v1 = &fused["v1"];
    assert!((v1.get(EmotionLabel::Joy) - 0.6).abs() < 1e-5);
    assert!((v1.get(EmotionLabel::Surprise) - 0.4).abs() < 1e-5);
}

#[test]
fn uniform_context_is_identity() {
    let rows: String = EmotionLabel::ALL
        .iter()
        .enumerate()
        .map(|(i, l)| format!(",CD,c{i},context_only,{l},true\n"))
        .collect();
    let dir = two_video_dir(&rows);
    Pipeline::new(human_context_config(dir.path()), true)
        .run(&[Stage::Aggregate, Stage::Face, Stage::Fuse])
        .unwrap();
    let fused = read_map(&dir.path().join("out/fused_bci.json"));
    let face = read_map(&dir.path().join("face.json"));
    for (id, f) in &face {
        for (a, b) in f.probs().iter().zip(fused[id].probs()) {
            assert!((a - b).abs() <= 1e-4);
        }
    }
}

#[test]
fn perfect_predictions_score_zero_zero_one() {
    let dir = two_video_dir(",CD,c1,context_only,sad,true\n");
    let cfg = human_context_config(dir.path());
    Pipeline::new(cfg.clone(), true).run(&[Stage::Aggregate]).unwrap();
    fs::copy(
        dir.path().join("out/human_context_based.json"),
        dir.path().join("face.json"),
    )
    .unwrap();
    Pipeline::new(cfg, true)
        .run(&[Stage::Face, Stage::Fuse, Stage::Eval])
        .unwrap();
    let csv = fs::read_to_string(dir.path().join("out/eval_methods.csv")).unwrap();
    let face_row = csv.lines().find(|l| l.starts_with("face (context-free)")).unwrap();
    assert_eq!(face_row, "face (context-free),0,0,1");
}

#[test]
fn corrupted_intermediate_names_the_key() {
    let dir = two_video_dir(",CD,c1,context_only,sad,true\n");
    let cfg = human_context_config(dir.path());
    Pipeline::new(cfg.clone(), true)
        .run(&[Stage::Aggregate, Stage::Face])
        .unwrap();
    let face_out = dir.path().join("out/face.json");
    let text = fs::read_to_string(&face_out).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["v2"]["joy"] = serde_json::json!(3.0);
    fs::write(&face_out, v.to_string()).unwrap();
    let err = Pipeline::new(cfg, true).run(&[Stage::Fuse]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("v2"), "{err}");
}

#[test]
fn face_and_outcome_keys_must_match() {
    let dir = two_video_dir(",CD,c1,context_only,sad,true\n");
    let cfg = human_context_config(dir.path());
    Pipeline::new(cfg.clone(), true).run(&[Stage::Aggregate]).unwrap();
    let face: BTreeMap<&str, EmotionDistribution> = [("v1", EmotionDistribution::uniform())].into_iter().collect();
    write_json(&dir.path().join("face.json"), &face);
    let err = Pipeline::new(cfg, true).run(&[Stage::Face, Stage::Fuse]).unwrap_err();
    assert!(matches!(err, PipelineError::Metrics(_)), "{err}");
    assert!(err.to_string().contains("v2"));
}

#[test]
fn empty_annotation_file_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ann.csv"), "").unwrap();
    let cfg = load_config(dir.path(), serde_json::json!({"annotations": "ann.csv"}));
    let err = Pipeline::new(cfg, true).run(&[Stage::Aggregate]).unwrap_err();
    assert!(
        matches!(err, PipelineError::Annotations { source: cuefuse::annotations::AnnotationError::SchemaError(_), .. }),
        "{err}"
    );
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("ann.csv"));
}

#[test]
fn empty_frame_file_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("frames.csv"), "").unwrap();
    let cfg = load_config(
        dir.path(),
        serde_json::json!({"annotations": "ann.csv", "face_frames": "frames.csv"}),
    );
    let err = Pipeline::new(cfg, true).run(&[Stage::Face]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("frames.csv"), "{err}");
}

#[test]
fn evidence_and_probability_frames() {
    let dir = tempfile::tempdir().unwrap();
    let header = "video_id,frame_index,joy,neutral,surprise,anger,disgust,fear,sad\n";
    fs::write(
        dir.path().join("ev.csv"),
        format!("{header}a,0,2,-1,0,0,0,0,0\na,1,0,1,-3,0,0,0,1\nb,0,-1,-1,-1,-1,-1,-1,-1\n"),
    )
    .unwrap();
    let cfg = load_config(
        dir.path(),
        serde_json::json!({"annotations": "ann.csv", "face_frames": "ev.csv"}),
    );
    Pipeline::new(cfg, true).run(&[Stage::Face]).unwrap();
    let face = read_map(&dir.path().join("out/face.json"));
    // Clamped means (1, 0.5, 0, 0, 0, 0, 0.5) rescale to (0.5, 0.25, ..., 0.25).
    assert_eq!(face["a"].probs(), &[0.5, 0.25, 0.0, 0.0, 0.0, 0.0, 0.25]);
    assert_eq!(face["b"], EmotionDistribution::uniform());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["degenerate_sources"], serde_json::json!(["b"]));

    let p = "0.1,0.2,0.3,0.1,0.1,0.1,0.1";
    fs::write(dir.path().join("sm.csv"), format!("{header}a,0,{p}\na,1,{p}\na,2,{p}\n")).unwrap();
    let cfg = load_config(
        dir.path(),
        serde_json::json!({"annotations": "ann.csv", "face_frames": "sm.csv", "face_source_kind": "probabilities", "output_dir": "out2"}),
    );
    Pipeline::new(cfg, true).run(&[Stage::Face]).unwrap();
    let face = read_map(&dir.path().join("out2/face.json"));
    for (a, b) in face["a"].probs().iter().zip([0.1, 0.2, 0.3, 0.1, 0.1, 0.1, 0.1]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_sample_context_is_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let answer = dist([0.1, 0.2, 0.3, 0.1, 0.1, 0.1, 0.1]);
    let mut fixture = ReplayFixture::default();
    for o in GameOutcome::ALL {
        fixture.push("m", &cuefuse::context::build_prompt(o), vec![format_answer(&answer)]);
    }
    write_json(&dir.path().join("replay.json"), &fixture);
    let cfg = load_config(
        dir.path(),
        serde_json::json!({
            "annotations": "ann.csv",
            "replay_fixtures": "replay.json",
            "llm_profiles": [{"model_name": "m", "n_samples": 1}]
        }),
    );
    Pipeline::new(cfg, true).run(&[Stage::Context]).unwrap();
    let ctx = read_map(&dir.path().join("out/context_m.json"));
    assert_eq!(ctx.len(), 4);
    for d in ctx.values() {
        for (a, b) in d.probs().iter().zip(answer.probs()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn live_mode_without_key_fails_before_network() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config(
        dir.path(),
        serde_json::json!({
            "annotations": "ann.csv",
            "llm_profiles": [{"model_name": "m", "provider": {"endpoint": "http://127.0.0.1:9/v1/chat/completions"}}]
        }),
    );
    if std::env::var_os("LLM_API_KEY").is_some() {
        return;
    }
    let err = Pipeline::new(cfg, false).run(&[Stage::Context]).unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(!dir.path().join("cache").exists());
}

#[test]
fn missing_replay_answers_are_an_llm_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load_config(
        dir.path(),
        serde_json::json!({"annotations": "ann.csv", "llm_profiles": [{"model_name": "m", "max_retries": 0}]}),
    );
    let err = Pipeline::new(cfg, true).run(&[Stage::Context]).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}

#[test]
fn lock_blocks_a_second_run() {
    let dir = two_video_dir(",CD,c1,context_only,sad,true\n");
    let cfg = human_context_config(dir.path());
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out").join(LOCK_FILE), "").unwrap();
    let err = Pipeline::new(cfg, true).run(&[Stage::Aggregate]).unwrap_err();
    assert!(matches!(err, PipelineError::Locked(_)));
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn llm_integration_offline_is_deterministic_and_cached() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &SynthSpec::default()).unwrap();
    let cfg = LoadedConfig::load(&dir.path().join("config_llm.json")).unwrap();
    Pipeline::new(cfg.clone(), true).run_all().unwrap();
    let first = snapshot(&dir.path().join("out_llm"));
    assert!(first.contains_key("fused_llm.json"));

    // Warm cache: the second run never reaches the client.
    let counting = Arc::new(CountingClient::new(ReplayClient::empty()));
    Pipeline::new(cfg, true).with_client(counting.clone()).run_all().unwrap();
    assert_eq!(counting.calls(), 0);
    assert_eq!(first, snapshot(&dir.path().join("out_llm")));
}

#[test]
fn stage_order_is_enforced_by_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_corpus(dir.path(), &SynthSpec::default()).unwrap();
    let cfg = LoadedConfig::load(&config).unwrap();
    let err = Pipeline::new(cfg, true).run(&[Stage::Fuse]).unwrap_err();
    assert!(matches!(err, PipelineError::MissingInput { .. }), "{err}");
    assert!(err.to_string().contains("cuefuse face"));
}

#[test]
fn config_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_corpus(dir.path(), &SynthSpec::default()).unwrap();
    let text = fs::read_to_string(config).unwrap();
    let parsed: RunConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&parsed).unwrap() + "\n", text);
}
