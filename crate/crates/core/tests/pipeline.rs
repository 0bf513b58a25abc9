//! Stage orchestration: resume, config guards and dependency errors.

use std::fs;
use std::path::Path;

use gabm_core::config::{GroupConfig, RunConfig};
use gabm_core::dataset::DyadOutcome;
use gabm_core::gateway::AgentParams;
use gabm_core::pipeline::{journal_outcomes, resume_run, run_stage, Layout, Stage, StageOptions};
use gabm_core::Error;

fn group(id: &str, provider: &str, model: &str) -> GroupConfig {
    GroupConfig {
        group_id: id.into(),
        agent: AgentParams {
            provider_id: provider.into(),
            model_id: model.into(),
            ..AgentParams::default()
        },
        worker_agent: None,
        profile_path: None,
    }
}

fn config() -> RunConfig {
    RunConfig {
        name: "pipeline-test".into(),
        master_seed: 77,
        groups: vec![group("human", "synthetic", "human-like")],
        ..RunConfig::default()
    }
}

fn dyad_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"kind\":\"dyad\""))
        .map(str::to_string)
        .collect()
}

/// Removes the last dyad outcome line, as if the process died before writing it.
fn drop_last_dyad(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let idx = lines
        .iter()
        .rposition(|l| l.contains("\"kind\":\"dyad\""))
        .unwrap();
    let removed = lines.remove(idx).to_string();
    fs::write(path, lines.join("\n") + "\n").unwrap();
    removed
}

fn simulate(cfg: &RunConfig, layout: &Layout) {
    let opts = StageOptions::default();
    run_stage(cfg, layout, Stage::Design, &opts).unwrap();
    run_stage(cfg, layout, Stage::Simulate, &opts).unwrap();
}

#[test]
fn resume_executes_only_missing_dyads() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = config();
    simulate(&cfg, &layout);
    let journal = layout.journal("human");
    let before = journal_outcomes(&journal).unwrap();
    assert_eq!(before.len(), 480);

    let removed = drop_last_dyad(&journal);
    assert_eq!(journal_outcomes(&journal).unwrap().len(), 479);

    let report = resume_run(&cfg, &layout, &StageOptions::default()).unwrap();
    assert_eq!(report.runs.len(), 1);
    assert_eq!(report.runs[0].executed, 1);
    assert_eq!(report.runs[0].reused, 479);
    let after = journal_outcomes(&journal).unwrap();
    assert_eq!(after.len(), 480);
    assert!(after.iter().all(|d| matches!(d, DyadOutcome::Complete(_))));
    // The rerun dyad reproduces the lost outcome.
    let rerun = dyad_lines(&journal).pop().unwrap();
    let strip = |s: &str| {
        let mut v: serde_json::Value = serde_json::from_str(s).unwrap();
        strip_timing(&mut v);
        v
    };
    assert_eq!(strip(&rerun), strip(&removed));
    assert!(layout.validation().exists());
}

fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.retain(|k, _| !k.ends_with("_ms"));
            m.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn resume_of_complete_run_executes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = config();
    simulate(&cfg, &layout);
    let journal = layout.journal("human");
    let lines = dyad_lines(&journal).len();
    let report = resume_run(&cfg, &layout, &StageOptions::default()).unwrap();
    assert_eq!(report.runs[0].executed, 0);
    assert_eq!(report.runs[0].reused, 480);
    assert_eq!(dyad_lines(&journal).len(), lines);
}

#[test]
fn resume_refuses_changed_config_with_diff() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = config();
    simulate(&cfg, &layout);
    let mut changed = cfg.clone();
    changed.master_seed = 78;
    let err = resume_run(&changed, &layout, &StageOptions::default()).unwrap_err();
    match &err {
        Error::ConfigMismatch { diff, .. } => assert!(diff.contains("master_seed"), "{diff}"),
        other => panic!("expected a config mismatch, got {other}"),
    }
    assert!(err.to_string().contains("master_seed"));
    // Nothing was overwritten.
    assert_eq!(
        journal_outcomes(&layout.journal("human")).unwrap().len(),
        480
    );
}

#[test]
fn missing_credential_names_the_variable() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let mut cfg = config();
    let mut g = group("remote", "gabm-test-nokey", "some-model");
    g.agent.endpoint = Some("http://127.0.0.1:9/v1/chat/completions".into());
    cfg.groups = vec![g];
    let opts = StageOptions::default();
    run_stage(&cfg, &layout, Stage::Design, &opts).unwrap();
    let err = run_stage(&cfg, &layout, Stage::Run, &opts).unwrap_err();
    match &err {
        Error::Credential { var } => assert_eq!(var, "GABM_TEST_NOKEY_API_KEY"),
        other => panic!("expected a credential error, got {other}"),
    }
    assert!(err.to_string().contains("GABM_TEST_NOKEY_API_KEY"));
}

#[test]
fn simulate_rejects_remote_groups() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let mut cfg = config();
    cfg.groups.push(group("remote", "openai", "gpt-4o"));
    let opts = StageOptions::default();
    run_stage(&cfg, &layout, Stage::Design, &opts).unwrap();
    let err = run_stage(&cfg, &layout, Stage::Simulate, &opts).unwrap_err();
    assert!(err.to_string().contains("remote"), "{err}");
}

#[test]
fn dependency_errors_name_the_producing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = config();
    let opts = StageOptions::default();
    let cases = [
        (Stage::Run, "design"),
        (Stage::BuildDataset, "run"),
        (Stage::Analyze, "build-dataset"),
        (Stage::FitPaths, "build-dataset"),
        (Stage::Validate, "analyze"),
    ];
    for (stage, producer) in cases {
        let err = run_stage(&cfg, &layout, stage, &opts).unwrap_err();
        assert!(
            matches!(err, Error::StageDependency { .. }),
            "{stage}: {err}"
        );
        assert!(
            err.to_string().contains(&format!("`{producer}`")),
            "{stage}: {err}"
        );
    }
}

#[test]
fn stale_dataset_is_refused_after_config_change() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let cfg = config();
    simulate(&cfg, &layout);
    let opts = StageOptions::default();
    run_stage(&cfg, &layout, Stage::BuildDataset, &opts).unwrap();
    let mut changed = cfg.clone();
    changed.master_seed = 5;
    let err = run_stage(&changed, &layout, Stage::Analyze, &opts).unwrap_err();
    assert!(matches!(err, Error::StageDependency { .. }), "{err}");
}
