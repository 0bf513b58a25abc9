//! Stage orchestration over a fixed output layout. Every artifact carries the
//! config hash, master seed and code version that produced it.

mod analysis;
mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{provenance_map, RunConfig, VERSION};
use crate::dataset::{
    export_dataset, load_dataset, validate_quality, AnalysisDataset, CenteringSpec, DyadOutcome,
};
use crate::design::{build_plan, derive_seed, ReplicationPlan};
use crate::error::{Error, Result};
use crate::paths::tables::{bootstrap_table_csv, path_table_csv};
use crate::paths::{
    bootstrap_indirect, fit_group_paths, BootstrapOptions, BootstrapResult, GroupPathModel,
    PathData,
};
use crate::stats::tables::{descriptives_csv, pairwise_csv, tost_csv};
use crate::stats::Variable;
use crate::validation::{emit_report, histogram, Provenance, ReportFiles, ValidationReport};

pub use analysis::{
    analyze_dataset, analyze_summaries, omnibus_csv, order_groups, parse_summaries, read_summaries,
    AnalysisResults, OmnibusRow,
};
pub use run::{check_journal, dyad_seed, journal_outcomes, run_group, GroupRunSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Design,
    Run,
    Simulate,
    BuildDataset,
    Analyze,
    FitPaths,
    Validate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Design,
        Stage::Run,
        Stage::Simulate,
        Stage::BuildDataset,
        Stage::Analyze,
        Stage::FitPaths,
        Stage::Validate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Design => "design",
            Stage::Run => "run",
            Stage::Simulate => "simulate",
            Stage::BuildDataset => "build-dataset",
            Stage::Analyze => "analyze",
            Stage::FitPaths => "fit-paths",
            Stage::Validate => "validate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown stage {s:?}")))
    }
}

/// Where each stage reads and writes, relative to one output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn plan(&self) -> PathBuf {
        self.root.join("plan.json")
    }

    pub fn journal(&self, group_id: &str) -> PathBuf {
        self.root.join("journals").join(format!("{group_id}.jsonl"))
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.csv")
    }

    pub fn quality(&self) -> PathBuf {
        self.root.join("quality.json")
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn analysis(&self) -> PathBuf {
        self.analysis_dir().join("analysis.json")
    }

    pub fn paths_dir(&self) -> PathBuf {
        self.root.join("paths")
    }

    pub fn path_table(&self, group_id: &str) -> PathBuf {
        self.paths_dir().join(format!("{group_id}.csv"))
    }

    pub fn paths(&self) -> PathBuf {
        self.paths_dir().join("paths.json")
    }

    pub fn validation(&self) -> PathBuf {
        self.root.join("validation.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// A JSON artifact with the provenance of the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: BTreeMap<String, String>,
    pub data: T,
}

/// Fitted models and bootstrap results for every group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResults {
    pub models: Vec<GroupPathModel>,
    pub bootstrap: Vec<BootstrapResult>,
}

/// Options that vary per invocation rather than per config.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageOptions {
    /// Restricts run and simulate to one group.
    pub group_id: Option<String>,
    /// Published summaries used by analyze instead of the dataset.
    pub summaries: Option<PathBuf>,
}

/// What a stage produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageReport {
    pub written: Vec<PathBuf>,
    pub runs: Vec<GroupRunSummary>,
    /// Threshold failures found by validate.
    pub threshold_failures: Vec<String>,
}

impl StageReport {
    fn absorb(&mut self, other: StageReport) {
        self.written.extend(other.written);
        self.runs.extend(other.runs);
        self.threshold_failures.extend(other.threshold_failures);
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn provenance_comment(cfg: &RunConfig) -> Result<String> {
    let p = provenance_map(cfg)?;
    Ok(format!(
        "# config_hash={} master_seed={} version={}\n",
        p["config_hash"], p["master_seed"], p["version"]
    ))
}

fn write_stamped_csv(cfg: &RunConfig, path: &Path, body: &str) -> Result<()> {
    write_file(path, &(provenance_comment(cfg)? + body))
}

fn write_stamped_json<T: Serialize>(cfg: &RunConfig, path: &Path, data: &T) -> Result<()> {
    let stamped = Stamped {
        provenance: provenance_map(cfg)?,
        data,
    };
    write_file(path, &(serde_json::to_string_pretty(&stamped)? + "\n"))
}

/// Reads a stamped artifact written under the current config. Artifacts from
/// another config are refused so stages never mix runs.
fn read_stamped<T: DeserializeOwned>(
    cfg: &RunConfig,
    path: &Path,
    stage: Stage,
    producer: Stage,
) -> Result<T> {
    if !path.exists() {
        return Err(Error::StageDependency {
            stage: stage.to_string(),
            requirement: format!("{} (run `{producer}` first)", path.display()),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stamped: Stamped<T> = serde_json::from_str(&text).map_err(|e| Error::json_at(path, &e))?;
    let hash = cfg.config_hash()?;
    match stamped.provenance.get("config_hash") {
        Some(h) if *h == hash => Ok(stamped.data),
        other => Err(Error::StageDependency {
            stage: stage.to_string(),
            requirement: format!(
                "{} produced by the current config (hash {hash}, found {}); rerun `{producer}`",
                path.display(),
                other.map_or("none", String::as_str)
            ),
        }),
    }
}

/// Loads the dataset. One stamped by another config is refused; an
/// unstamped one (placed by hand) is accepted.
fn require_dataset(cfg: &RunConfig, layout: &Layout, stage: Stage) -> Result<AnalysisDataset> {
    let path = layout.dataset();
    if !path.exists() {
        return Err(Error::StageDependency {
            stage: stage.to_string(),
            requirement: format!("{} (run `build-dataset` first)", path.display()),
        });
    }
    let ds = load_dataset(&path)?;
    let hash = cfg.config_hash()?;
    match ds.manifest.provenance.get("config_hash") {
        Some(h) if *h != hash => Err(Error::StageDependency {
            stage: stage.to_string(),
            requirement: format!(
                "{} produced by the current config (hash {hash}, found {h}); rerun `build-dataset`",
                path.display()
            ),
        }),
        _ => Ok(ds),
    }
}

fn preferred_order(cfg: &RunConfig) -> Vec<String> {
    cfg.groups.iter().map(|g| g.group_id.clone()).collect()
}

fn relative_to(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .display()
        .to_string()
        .replace('\\', "/")
}

/// Writes the replication plan.
pub fn stage_design(cfg: &RunConfig, layout: &Layout) -> Result<StageReport> {
    let plan = build_plan(cfg.replications, cfg.master_seed)?;
    write_stamped_json(cfg, &layout.plan(), &plan)?;
    Ok(StageReport {
        written: vec![layout.plan()],
        ..Default::default()
    })
}

/// Reads the plan written by `design`, checking it matches the config.
pub fn read_plan(cfg: &RunConfig, layout: &Layout, stage: Stage) -> Result<ReplicationPlan> {
    read_stamped(cfg, &layout.plan(), stage, Stage::Design)
}

/// Executes dyads for the configured groups. `synthetic_only` is the
/// `simulate` stage, which refuses groups backed by a network provider.
pub fn stage_run(
    cfg: &RunConfig,
    layout: &Layout,
    opts: &StageOptions,
    resume: bool,
    synthetic_only: bool,
) -> Result<StageReport> {
    let stage = if synthetic_only {
        Stage::Simulate
    } else {
        Stage::Run
    };
    read_plan(cfg, layout, stage)?;
    let groups: Vec<_> = match &opts.group_id {
        Some(id) => vec![cfg.group(id)?],
        None => cfg.groups.iter().collect(),
    };
    if groups.is_empty() {
        return Err(Error::invalid("no agent groups are configured"));
    }
    if synthetic_only {
        if let Some(g) = groups.iter().find(|g| !g.is_synthetic()) {
            return Err(Error::invalid(format!(
                "simulate runs synthetic groups only; {} uses provider {}",
                g.group_id, g.agent.provider_id
            )));
        }
    }
    let mut report = StageReport::default();
    for g in groups {
        let path = layout.journal(&g.group_id);
        report.runs.push(run_group(cfg, g, &path, resume)?);
        report.written.push(path);
    }
    Ok(report)
}

/// Assembles the analysis dataset from journals and imported datasets, and
/// writes the quality report.
pub fn stage_build_dataset(cfg: &RunConfig, layout: &Layout) -> Result<StageReport> {
    let mut outcomes: Vec<DyadOutcome> = Vec::new();
    let mut sources = Vec::new();
    for g in &cfg.groups {
        let path = layout.journal(&g.group_id);
        if !path.exists() {
            return Err(Error::StageDependency {
                stage: Stage::BuildDataset.to_string(),
                requirement: format!("journal {} (run `run` or `simulate` first)", path.display()),
            });
        }
        let contents = crate::dataset::read_journal(&path)?;
        if contents.header.config_hash != cfg.config_hash()? {
            return Err(Error::StageDependency {
                stage: Stage::BuildDataset.to_string(),
                requirement: format!("journal {} produced by the current config", path.display()),
            });
        }
        outcomes.extend(journal_outcomes(&path)?);
        sources.push(relative_to(&path, &layout.root));
    }
    let quality = validate_quality(&outcomes, cfg.replications);
    let records: Vec<_> = outcomes
        .iter()
        .filter_map(|o| o.record().cloned())
        .collect();
    let spec = CenteringSpec::new(cfg.analysis.centering);
    let mut parts = Vec::new();
    if !records.is_empty() {
        parts.push(AnalysisDataset::from_records(&records, &spec)?);
    }
    for p in &cfg.import_datasets {
        parts.push(load_dataset(p)?);
        sources.push(p.display().to_string());
    }
    if parts.is_empty() {
        return Err(Error::StageDependency {
            stage: Stage::BuildDataset.to_string(),
            requirement: "at least one completed dyad or imported dataset".into(),
        });
    }
    let mut ds = AnalysisDataset::merge(parts, &spec)?;
    ds.manifest.sources = sources;
    ds.manifest.provenance = provenance_map(cfg)?;
    export_dataset(&ds, layout.dataset())?;
    write_stamped_json(cfg, &layout.quality(), &quality)?;
    Ok(StageReport {
        written: vec![
            layout.dataset(),
            crate::dataset::manifest_path(&layout.dataset()),
            layout.quality(),
        ],
        ..Default::default()
    })
}

/// Surface battery: descriptives, Levene, Welch, Games-Howell and TOST.
pub fn stage_analyze(cfg: &RunConfig, layout: &Layout, opts: &StageOptions) -> Result<StageReport> {
    let res = match &opts.summaries {
        Some(path) => {
            let summaries = read_summaries(path)?;
            let mut present: Vec<String> = summaries.iter().map(|s| s.group_id.clone()).collect();
            present.sort();
            present.dedup();
            let groups = order_groups(&present, &cfg.reference_group, &preferred_order(cfg));
            let name = path.file_name().map_or_else(
                || path.display().to_string(),
                |n| n.to_string_lossy().into(),
            );
            analyze_summaries(
                summaries,
                groups,
                &cfg.reference_group,
                &cfg.analysis,
                &name,
            )?
        }
        None => {
            let ds = require_dataset(cfg, layout, Stage::Analyze)?;
            analyze_dataset(
                &ds,
                &cfg.reference_group,
                &preferred_order(cfg),
                &cfg.analysis,
            )?
        }
    };
    write_analysis(cfg, layout, &res)
}

fn write_analysis(cfg: &RunConfig, layout: &Layout, res: &AnalysisResults) -> Result<StageReport> {
    let dir = layout.analysis_dir();
    let mut written = Vec::new();
    let mut csv_out = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        write_stamped_csv(cfg, &path, &body)?;
        written.push(path);
        Ok(())
    };
    csv_out("descriptives.csv".into(), descriptives_csv(&res.summaries)?)?;
    csv_out("tost.csv".into(), tost_csv(&res.tost)?)?;
    csv_out("omnibus.csv".into(), omnibus_csv(&res.omnibus)?)?;
    for (v, rows) in &res.pairwise {
        csv_out(format!("pairwise_{}.csv", v.short()), pairwise_csv(rows)?)?;
    }
    write_stamped_json(cfg, &layout.analysis(), res)?;
    written.push(layout.analysis());
    Ok(StageReport {
        written,
        ..Default::default()
    })
}

/// Bootstrap seed for one group.
pub fn bootstrap_seed(master_seed: u64, group_id: &str) -> u64 {
    derive_seed(master_seed, &[b"bootstrap", group_id.as_bytes()])
}

/// Fits the path model and bootstraps the indirect effects for every group
/// in the dataset.
pub fn stage_fit_paths(cfg: &RunConfig, layout: &Layout) -> Result<StageReport> {
    let ds = require_dataset(cfg, layout, Stage::FitPaths)?;
    let groups = order_groups(&ds.group_ids(), &cfg.reference_group, &preferred_order(cfg));
    let a = &cfg.analysis;
    let mut models = Vec::new();
    let mut boots = Vec::new();
    let mut written = Vec::new();
    for g in &groups {
        let model = fit_group_paths(&ds, g, &a.coding, a.se_mode)?;
        let data = PathData::from_dataset(&ds, g, &a.coding)?;
        let opts = BootstrapOptions {
            resamples: a.bootstrap_resamples,
            seed: bootstrap_seed(cfg.master_seed, g),
            alpha: a.alpha,
            parallel: true,
        };
        boots.push(bootstrap_indirect(&data, &opts)?);
        let path = layout.path_table(g);
        write_stamped_csv(cfg, &path, &path_table_csv(&model)?)?;
        written.push(path);
        models.push(model);
    }
    let bpath = layout.paths_dir().join("bootstrap.csv");
    write_stamped_csv(cfg, &bpath, &bootstrap_table_csv(&boots)?)?;
    written.push(bpath);
    write_stamped_json(
        cfg,
        &layout.paths(),
        &PathResults {
            models,
            bootstrap: boots,
        },
    )?;
    written.push(layout.paths());
    Ok(StageReport {
        written,
        ..Default::default()
    })
}

/// Combines surface and process results into verdicts and rankings.
pub fn stage_validate(cfg: &RunConfig, layout: &Layout) -> Result<StageReport> {
    let analysis: AnalysisResults =
        read_stamped(cfg, &layout.analysis(), Stage::Validate, Stage::Analyze)?;
    let paths: PathResults = read_stamped(cfg, &layout.paths(), Stage::Validate, Stage::FitPaths)?;
    let mut histograms = Vec::new();
    if layout.dataset().exists() {
        let ds = require_dataset(cfg, layout, Stage::Validate)?;
        for g in order_groups(&ds.group_ids(), &cfg.reference_group, &preferred_order(cfg)) {
            for v in [Variable::Joint, Variable::Diff] {
                let raw: Vec<f64> = ds.group_rows(&g).map(|r| r.outcome.raw().get(v)).collect();
                histograms.push(histogram(&g, v, &raw)?);
            }
        }
    }
    let report = ValidationReport::build(
        Provenance {
            config_hash: cfg.config_hash()?,
            master_seed: cfg.master_seed,
            version: VERSION.to_string(),
        },
        &cfg.reference_group,
        cfg.analysis.alpha,
        cfg.analysis.margin_factor,
        analysis.tost,
        paths.models,
        paths.bootstrap,
        histograms,
        cfg.thresholds,
    )?;
    write_stamped_json(cfg, &layout.validation(), &report)?;
    Ok(StageReport {
        written: vec![layout.validation()],
        threshold_failures: report.threshold_failures(),
        ..Default::default()
    })
}

/// Renders the validation report as Markdown, CSV and SVG.
pub fn stage_report(cfg: &RunConfig, layout: &Layout) -> Result<StageReport> {
    let report: ValidationReport =
        read_stamped(cfg, &layout.validation(), Stage::Report, Stage::Validate)?;
    let ReportFiles { markdown, csv, svg } = emit_report(&report, layout.report_dir())?;
    Ok(StageReport {
        written: vec![markdown, csv, svg],
        threshold_failures: report.threshold_failures(),
        ..Default::default()
    })
}

/// Runs a single stage.
pub fn run_stage(
    cfg: &RunConfig,
    layout: &Layout,
    stage: Stage,
    opts: &StageOptions,
) -> Result<StageReport> {
    match stage {
        Stage::Design => stage_design(cfg, layout),
        Stage::Run => stage_run(cfg, layout, opts, false, false),
        Stage::Simulate => stage_run(cfg, layout, opts, false, true),
        Stage::BuildDataset => stage_build_dataset(cfg, layout),
        Stage::Analyze => stage_analyze(cfg, layout, opts),
        Stage::FitPaths => stage_fit_paths(cfg, layout),
        Stage::Validate => stage_validate(cfg, layout),
        Stage::Report => stage_report(cfg, layout),
    }
}

fn downstream(
    cfg: &RunConfig,
    layout: &Layout,
    opts: &StageOptions,
    mut report: StageReport,
) -> Result<StageReport> {
    for stage in [
        Stage::BuildDataset,
        Stage::Analyze,
        Stage::FitPaths,
        Stage::Validate,
        Stage::Report,
    ] {
        let r = run_stage(cfg, layout, stage, opts)?;
        if stage == Stage::Report {
            report.threshold_failures = r.threshold_failures;
            report.written.extend(r.written);
        } else {
            let failures = std::mem::take(&mut report.threshold_failures);
            report.absorb(r);
            if stage != Stage::Validate {
                report.threshold_failures = failures;
            }
        }
    }
    Ok(report)
}

/// Every stage from a fresh start. Journals are replaced.
pub fn run_pipeline(cfg: &RunConfig, layout: &Layout, opts: &StageOptions) -> Result<StageReport> {
    let mut report = stage_design(cfg, layout)?;
    if !cfg.groups.is_empty() {
        report.absorb(stage_run(cfg, layout, opts, false, false)?);
    }
    downstream(cfg, layout, opts, report)
}

/// Continues an interrupted run: only dyads missing from the journals are
/// executed, then every later stage is recomputed.
pub fn resume_run(cfg: &RunConfig, layout: &Layout, opts: &StageOptions) -> Result<StageReport> {
    // A changed config is reported against the journals, which say what changed.
    for g in &cfg.groups {
        let path = layout.journal(&g.group_id);
        if path.exists() {
            check_journal(cfg, &path)?;
        }
    }
    let mut report = if layout.plan().exists() {
        read_plan(cfg, layout, Stage::Run)?;
        StageReport::default()
    } else {
        stage_design(cfg, layout)?
    };
    if !cfg.groups.is_empty() {
        report.absorb(stage_run(cfg, layout, opts, true, false)?);
    }
    downstream(cfg, layout, opts, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    fn missing_inputs_are_stage_dependencies() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let cfg = RunConfig::default();
        for stage in [
            Stage::Analyze,
            Stage::FitPaths,
            Stage::Validate,
            Stage::Report,
            Stage::Run,
        ] {
            let err = run_stage(&cfg, &layout, stage, &StageOptions::default()).unwrap_err();
            assert!(
                matches!(err, Error::StageDependency { .. }),
                "{stage}: {err}"
            );
        }
    }

    #[test]
    fn plan_from_another_config_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let cfg = RunConfig::default();
        stage_design(&cfg, &layout).unwrap();
        assert_eq!(
            read_plan(&cfg, &layout, Stage::Run).unwrap().entries.len(),
            480
        );
        let other = RunConfig {
            master_seed: 99,
            ..RunConfig::default()
        };
        assert!(matches!(
            read_plan(&other, &layout, Stage::Run),
            Err(Error::StageDependency { .. })
        ));
        let text = std::fs::read_to_string(layout.plan()).unwrap();
        assert!(text.contains("\"config_hash\""));
    }

    #[test]
    fn bootstrap_seeds_differ_by_group() {
        assert_ne!(bootstrap_seed(1, "a"), bootstrap_seed(1, "b"));
        assert_eq!(bootstrap_seed(1, "a"), bootstrap_seed(1, "a"));
    }
}
