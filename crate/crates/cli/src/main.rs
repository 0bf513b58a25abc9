//! `gabm`: run dyadic vignette experiments and validate agents against a
//! human reference group.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gabm_core::config::RunConfig;
use gabm_core::pipeline::{resume_run, run_stage, Layout, Stage, StageOptions, StageReport};

#[derive(Parser, Debug)]
#[command(
    name = "gabm",
    version,
    about = "Dyadic vignette experiments with surface and process validation"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Restrict run/simulate to one group.
    #[arg(long = "group-id", global = true, value_name = "NAME")]
    group_id: Option<String>,
    /// Summary statistics CSV (group_id,variable,n,mean,sd) for analyze.
    #[arg(long, global = true, value_name = "PATH")]
    summaries: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the replication plan.
    Design,
    /// Execute dyads against the configured providers.
    Run,
    /// Execute dyads with synthetic agents only.
    Simulate,
    /// Assemble the analysis dataset from journals and imports.
    BuildDataset,
    /// Descriptives, Levene, Welch ANOVA, Games-Howell and TOST.
    Analyze,
    /// Fit path models and bootstrap indirect effects.
    FitPaths,
    /// Combine results into verdicts and rankings.
    Validate,
    /// Render the report as Markdown, CSV and SVG.
    Report,
    /// Run stages in order; all of them unless --stage is given.
    Pipeline {
        /// Stage to include; repeatable.
        #[arg(long = "stage", value_name = "NAME")]
        stages: Vec<Stage>,
    },
    /// Finish an interrupted run, then recompute later stages.
    Resume,
}

const PIPELINE_STAGES: [Stage; 7] = [
    Stage::Design,
    Stage::Run,
    Stage::BuildDataset,
    Stage::Analyze,
    Stage::FitPaths,
    Stage::Validate,
    Stage::Report,
];

fn load_config(g: &GlobalArgs) -> gabm_core::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> gabm_core::Result<StageReport> {
    let cfg = load_config(&cli.global)?;
    let layout = Layout::new(&cfg.output_dir);
    let opts = StageOptions {
        group_id: cli.global.group_id.clone(),
        summaries: cli.global.summaries.clone(),
    };
    let single = |stage| run_stage(&cfg, &layout, stage, &opts);
    match &cli.command {
        Command::Design => single(Stage::Design),
        Command::Run => single(Stage::Run),
        Command::Simulate => single(Stage::Simulate),
        Command::BuildDataset => single(Stage::BuildDataset),
        Command::Analyze => single(Stage::Analyze),
        Command::FitPaths => single(Stage::FitPaths),
        Command::Validate => single(Stage::Validate),
        Command::Report => single(Stage::Report),
        Command::Resume => resume_run(&cfg, &layout, &opts),
        Command::Pipeline { stages } => {
            let mut selected: Vec<Stage> = if stages.is_empty() {
                PIPELINE_STAGES.to_vec()
            } else {
                stages.clone()
            };
            selected.sort();
            selected.dedup();
            let mut report = StageReport::default();
            for stage in selected {
                let r = single(stage)?;
                eprintln!("{stage}: done");
                report.written.extend(r.written);
                report.runs.extend(r.runs);
                report.threshold_failures = r.threshold_failures;
            }
            Ok(report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            for r in &report.runs {
                eprintln!(
                    "{}: executed {} dyads ({} failed), reused {}",
                    r.group_id, r.executed, r.failed, r.reused
                );
            }
            for p in &report.written {
                println!("{}", p.display());
            }
            if report.threshold_failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &report.threshold_failures {
                    eprintln!("threshold not met: {f}");
                }
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
