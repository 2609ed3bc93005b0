use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use garment_cli::demo::{write_demo, DemoScale};
use garment_cli::pipeline::{BASE_NORMALIZED, DEFORMED, EVAL_REPORT, GUIDE_ALIGNED};
use garment_cli::{run_pipeline, Manifest, Overrides, Pipeline, PipelineConfig, StageName, StageStatus};
use garment_core::mesh::load_obj;
use garment_core::optim::{save_checkpoint, Deformer};

fn demo() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = write_demo(dir.path(), DemoScale::Quick).unwrap();
    (dir, config)
}

fn load(config: &Path) -> PipelineConfig {
    PipelineConfig::load(config, &Overrides::default()).unwrap()
}

fn garment(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_garment")).args(args).env_remove("GARMENT_EMBED_ENDPOINT").env("RUST_LOG", "warn").output().unwrap()
}

fn statuses(m: &Manifest) -> Vec<(StageName, StageStatus)> {
    m.stages.iter().map(|r| (r.stage, r.status)).collect()
}

fn all_outputs(m: &Manifest) -> BTreeMap<String, String> {
    m.stages.iter().flat_map(|r| r.output_hashes.clone()).collect()
}

fn edit_config(path: &Path, edit: impl FnOnce(&mut serde_json::Value)) {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    edit(&mut v);
    std::fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn rerun_with_unchanged_inputs_reuses_every_stage() {
    let (_dir, path) = demo();
    let config = load(&path);
    let first = run_pipeline(&config, None).unwrap();
    assert!(first.stages.iter().all(|r| r.status == StageStatus::Completed), "{:?}", statuses(&first));
    assert_eq!(first.stages.len(), 5);
    let second = run_pipeline(&config, None).unwrap();
    assert!(second.stages.iter().all(|r| r.status == StageStatus::Reused), "{:?}", statuses(&second));
    assert_eq!(all_outputs(&first), all_outputs(&second));
}

#[test]
fn missing_guidance_image_fails_validation_before_any_stage() {
    let (dir, path) = demo();
    std::fs::remove_file(dir.path().join("guidance.png")).unwrap();
    let out = garment(&["pipeline", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("guidance_image"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn identical_runs_produce_identical_output_hashes() {
    let (_a, pa) = demo();
    let (_b, pb) = demo();
    let ma = run_pipeline(&load(&pa), None).unwrap();
    let mb = run_pipeline(&load(&pb), None).unwrap();
    assert_eq!(all_outputs(&ma), all_outputs(&mb));
    assert!(all_outputs(&ma).len() >= 15);
}

#[test]
fn deleting_outputs_reruns_that_stage_and_its_dependents_only() {
    let (dir, path) = demo();
    let config = load(&path);
    run_pipeline(&config, None).unwrap();
    let out = dir.path().join("out");

    std::fs::remove_file(out.join(EVAL_REPORT)).unwrap();
    let m = run_pipeline(&config, None).unwrap();
    use StageName::*;
    use StageStatus::*;
    assert_eq!(statuses(&m), vec![(Align, Reused), (Deform, Reused), (Evaluate, Completed), (Texture, Reused), (Fit, Reused)]);

    std::fs::remove_file(out.join(DEFORMED)).unwrap();
    let m = run_pipeline(&config, None).unwrap();
    assert_eq!(statuses(&m), vec![(Align, Reused), (Deform, Completed), (Evaluate, Completed), (Texture, Completed), (Fit, Completed)]);
}

#[test]
fn changed_settings_invalidate_only_the_stages_that_read_them() {
    let (_dir, path) = demo();
    run_pipeline(&load(&path), None).unwrap();
    edit_config(&path, |v| v["evaluation"]["views"] = 12.into());
    let m = run_pipeline(&load(&path), None).unwrap();
    use StageName::*;
    use StageStatus::*;
    assert_eq!(statuses(&m), vec![(Align, Reused), (Deform, Reused), (Evaluate, Completed), (Texture, Reused), (Fit, Reused)]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path.parent().unwrap().join("out").join(EVAL_REPORT)).unwrap()).unwrap();
    assert_eq!(report["views"].as_array().unwrap().len(), 12);
}

#[test]
fn stage_flag_runs_only_the_dependency_closure() {
    let (dir, path) = demo();
    let out = garment(&["deform", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = Manifest::load_or_default(&dir.path().join("out"));
    assert_eq!(statuses(&m), vec![(StageName::Align, StageStatus::Completed), (StageName::Deform, StageStatus::Completed)]);
    let out = garment(&["pipeline", "--stage", "fit", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let m = Manifest::load_or_default(&dir.path().join("out"));
    assert_eq!(m.get(StageName::Deform).unwrap().status, StageStatus::Reused);
    assert_eq!(m.get(StageName::Fit).unwrap().status, StageStatus::Completed);
    assert!(m.get(StageName::Texture).is_none());
}

#[test]
fn absent_optional_inputs_skip_their_stages() {
    let (_dir, path) = demo();
    edit_config(&path, |v| {
        v["paths"]["views"] = serde_json::Value::Null;
        v["paths"]["body_file"] = serde_json::Value::Null;
    });
    let m = run_pipeline(&load(&path), None).unwrap();
    assert_eq!(m.get(StageName::Texture).unwrap().status, StageStatus::Skipped);
    assert_eq!(m.get(StageName::Fit).unwrap().status, StageStatus::Skipped);
    assert!(m.get(StageName::Fit).unwrap().output_hashes.is_empty());
}

#[test]
fn unreachable_embedding_service_exits_with_provider_failure() {
    let (dir, path) = demo();
    edit_config(&path, |v| {
        v["provider"] = serde_json::json!({"kind": "stub", "retries": 0, "timeout_seconds": 2.0});
    });
    let out = garment(&["pipeline", "--provider", "remote", "--endpoint", "http://127.0.0.1:9/embed", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let m = Manifest::load_or_default(&dir.path().join("out"));
    assert_eq!(statuses(&m), vec![(StageName::Align, StageStatus::Completed), (StageName::Deform, StageStatus::Failed)]);
    assert!(m.get(StageName::Deform).unwrap().error.is_some());
}

#[test]
fn remote_without_endpoint_is_a_validation_error() {
    let (_dir, path) = demo();
    let out = garment(&["pipeline", "--provider", "remote", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn broken_input_mesh_is_a_stage_failure_with_the_completed_prefix_recorded() {
    let (dir, path) = demo();
    let config = load(&path);
    run_pipeline(&config, None).unwrap();
    std::fs::write(dir.path().join("base.obj"), "v 0 0 0\nf 1 2 3\n").unwrap();
    let out = garment(&["pipeline", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let m = Manifest::load_or_default(&dir.path().join("out"));
    assert_eq!(statuses(&m), vec![(StageName::Align, StageStatus::Failed)]);
}

#[test]
fn resumed_deformation_matches_an_uninterrupted_run() {
    let (_a, pa) = demo();
    let (_b, pb) = demo();
    let straight = run_pipeline(&load(&pa), Some(StageName::Deform)).unwrap();

    // interrupted run: align, then a checkpoint written partway through the budget
    let config = load(&pb);
    run_pipeline(&config, Some(StageName::Align)).unwrap();
    let pipeline = Pipeline::new(&config).unwrap();
    let inputs = pipeline.stage_inputs(StageName::Deform).unwrap();
    let out = &config.paths.output_dir;
    let base = load_obj(out.join(BASE_NORMALIZED)).unwrap();
    let guide = load_obj(out.join(GUIDE_ALIGNED)).unwrap();
    let provider = config.build_provider().unwrap();
    let deformer = Deformer::new(&base, &guide, config.optimization.clone(), Some(provider.as_ref())).unwrap();
    let mut state = deformer.initial_state();
    deformer.run_until(&mut state, 17, Default::default()).unwrap();
    let checkpoint = pipeline.checkpoint_path(&inputs).unwrap();
    std::fs::create_dir_all(checkpoint.parent().unwrap()).unwrap();
    save_checkpoint(&state, &checkpoint).unwrap();

    let resumed = run_pipeline(&config, Some(StageName::Deform)).unwrap();
    assert_eq!(resumed.get(StageName::Deform).unwrap().output_hashes, straight.get(StageName::Deform).unwrap().output_hashes);
    assert!(!checkpoint.exists());
}
