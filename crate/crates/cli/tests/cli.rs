//! End-to-end checks of the `gabm` binary: exit codes, messages and outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gabm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gabm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(rel)
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn synthetic_config(dir: &Path, thresholds: &str) -> String {
    let out = dir.join("out");
    write_config(
        dir,
        &format!(
            r#"{{
  "name": "cli-test",
  "master_seed": 99,
  "replications": 5,
  "reference_group": "human",
  "groups": [
    {{ "group_id": "human", "agent": {{ "provider_id": "synthetic", "model_id": "human-like" }} }},
    {{ "group_id": "lenient", "agent": {{ "provider_id": "synthetic", "model_id": "lenient" }} }}
  ],
  "thresholds": {thresholds},
  "output_dir": {out:?}
}}"#
        ),
    )
}

/// (group, variable) -> equivalent, from a CSV with those columns named.
fn equivalence_flags(
    path: &Path,
    group: &str,
    variable: &str,
    flag: &str,
) -> Vec<(String, String, bool)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap();
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (g, v, f) = (col(group), col(variable), col(flag));
    let mut out: Vec<(String, String, bool)> = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            (
                rec[g].to_string(),
                rec[v].to_string(),
                rec[f].eq_ignore_ascii_case("true"),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn analyze_from_summaries_reproduces_equivalence_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(r#"{{ "name": "summaries", "reference_group": "Human", "output_dir": {out:?} }}"#),
    );
    let summaries = fixture("reference/summaries.csv");
    let o = gabm(&[
        "analyze",
        "--config",
        &cfg,
        "--summaries",
        summaries.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let got = equivalence_flags(
        &out.join("analysis/tost.csv"),
        "Comparison",
        "DV",
        "Is Equivalent",
    );
    let want = equivalence_flags(
        &fixture("reference/tost.csv"),
        "group_id",
        "variable",
        "equivalent",
    );
    assert_eq!(got.len(), want.len());
    let label = |v: &str| match v {
        "tip" => "Tip change",
        "joint" => "Joint satisfaction",
        "diff" => "Differential satisfaction",
        other => panic!("unknown variable {other}"),
    };
    for (g, v, eq) in &want {
        let comparison = format!("{g} vs. Human");
        let found = got
            .iter()
            .find(|(c, dv, _)| *c == comparison && dv == label(v))
            .unwrap_or_else(|| panic!("missing {comparison} {v}"));
        assert_eq!(found.2, *eq, "{comparison} {v}");
    }
}

#[test]
fn simulate_and_pipeline_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), "{}");
    let o = gabm(&["design", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = gabm(&["simulate", "--config", &cfg, "--group-id", "lenient"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stderr(&o).contains("lenient: executed 80 dyads"),
        "{}",
        stderr(&o)
    );
    assert!(dir.path().join("out/journals/lenient.jsonl").exists());
    assert!(!dir.path().join("out/journals/human.jsonl").exists());

    let o = gabm(&["pipeline", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.ends_with("report.md")), "{stdout}");
}

#[test]
fn unmet_threshold_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), r#"{ "min_pathway_matches": 11 }"#);
    let o = gabm(&["pipeline", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("threshold not met"), "{}", stderr(&o));
    assert!(dir.path().join("out/validation.json").exists());
}

#[test]
fn missing_stage_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), "{}");
    let o = gabm(&["analyze", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.starts_with("error: "), "{msg}");
    assert!(msg.contains("build-dataset"), "{msg}");
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{ "replications": 0 }"#);
    let o = gabm(&["design", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn seed_flag_changes_the_plan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), "{}");
    let plan = dir.path().join("out/plan.json");
    assert!(gabm(&["design", "--config", &cfg]).status.success());
    let a = fs::read_to_string(&plan).unwrap();
    assert!(gabm(&["design", "--config", &cfg, "--seed", "100"])
        .status
        .success());
    let b = fs::read_to_string(&plan).unwrap();
    assert_ne!(a, b);
}
