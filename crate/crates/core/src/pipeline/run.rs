//! Executing the replication plan for one group against its agents, with a
//! journal that makes the run resumable.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::config::{config_diff, GroupConfig, RunConfig};
use crate::dataset::{read_journal, DyadOutcome, Journal, JournalHeader};
use crate::design::{build_plan, derive_seed, PlanEntry};
use crate::error::{Error, Result};
use crate::gateway::{
    dyad_id, now_ms, run_dyad, Agent, AgentParams, CallPhase, CustomerResult, DyadContext,
    RateLimiter,
};
use crate::vignette::{PromptText, Role, VignetteLibrary};

/// What a run of one group did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupRunSummary {
    pub group_id: String,
    /// Dyads executed by this invocation.
    pub executed: usize,
    /// Complete dyads already present in the journal.
    pub reused: usize,
    pub failed: usize,
}

fn build_agent(group: &GroupConfig, params: &AgentParams) -> Result<Agent> {
    let agent = if params.provider_id == "synthetic" {
        Agent::synthetic(params.clone(), group.synthetic_profile(params)?)?
    } else {
        Agent::http(params.clone())?
    };
    Ok(match params.requests_per_minute {
        Some(rpm) => agent.with_limiter(Arc::new(RateLimiter::per_minute(rpm))),
        None => agent,
    })
}

pub(crate) fn load_library(cfg: &RunConfig) -> Result<VignetteLibrary> {
    match &cfg.vignettes {
        Some(p) => VignetteLibrary::load(p),
        None => Ok(VignetteLibrary::builtin()),
    }
}

/// Dyad seed: the plan seed specialized to the group.
pub fn dyad_seed(entry: &PlanEntry, group_id: &str) -> u64 {
    derive_seed(entry.seed, &[b"group", group_id.as_bytes()])
}

/// Customer results journaled for dyads that never finished.
fn pending_customers(events: &[crate::gateway::CallEvent]) -> BTreeMap<String, CustomerResult> {
    events
        .iter()
        .filter(|e| e.phase == CallPhase::Completed && e.role == Role::Customer)
        .filter_map(|e| {
            let parsed = e.parsed.clone()?;
            Some((e.dyad_id.clone(), serde_json::from_value(parsed).ok()?))
        })
        .collect()
}

/// Refuses a journal written under a different configuration, naming the
/// keys that differ.
pub fn check_journal(cfg: &RunConfig, journal_path: &Path) -> Result<()> {
    let hash = cfg.config_hash()?;
    let header = read_journal(journal_path)?.header;
    if header.config_hash == hash {
        return Ok(());
    }
    let diff = config_diff(&header.config, &cfg.hashed_value()?);
    Err(Error::ConfigMismatch {
        journal: header.config_hash,
        config: hash,
        diff: if diff.is_empty() {
            "(none recorded)".into()
        } else {
            diff.join(", ")
        },
    })
}

/// Runs the dyads of `group` that the journal does not already hold as
/// complete. With `resume` false any existing journal is replaced.
pub fn run_group(
    cfg: &RunConfig,
    group: &GroupConfig,
    journal_path: &Path,
    resume: bool,
) -> Result<GroupRunSummary> {
    let hash = cfg.config_hash()?;
    let run_id = cfg.run_id()?;
    let (journal, done, pending) = if resume && journal_path.exists() {
        check_journal(cfg, journal_path)?;
        let (journal, contents) = Journal::open_append(journal_path)?;
        let mut done: BTreeMap<String, DyadOutcome> = BTreeMap::new();
        for d in contents.dyads {
            if matches!(d, DyadOutcome::Complete(_)) || !done.contains_key(d.dyad_id()) {
                done.insert(d.dyad_id().to_string(), d);
            }
        }
        let mut pending = pending_customers(&contents.events);
        for (id, d) in &done {
            if let DyadOutcome::Failed(f) = d {
                if let Some(c) = &f.customer {
                    pending.insert(id.clone(), c.clone());
                }
            }
        }
        (journal, done, pending)
    } else {
        let header = JournalHeader {
            run_id: run_id.clone(),
            config_hash: hash,
            created_ms: now_ms(),
            config: cfg.hashed_value()?,
        };
        (
            Journal::create(journal_path, header)?,
            BTreeMap::new(),
            BTreeMap::new(),
        )
    };

    let library = load_library(cfg)?;
    let text = PromptText::default();
    let customer = build_agent(group, &group.agent)?;
    let worker = build_agent(group, group.worker())?;
    let ctx = DyadContext {
        run_id: &run_id,
        group_id: &group.group_id,
        library: &library,
        text: &text,
        price: cfg.price,
        initial_tip: cfg.initial_tip,
    };
    let plan = build_plan(cfg.replications, cfg.master_seed)?;
    let complete: BTreeSet<&String> = done
        .iter()
        .filter(|(_, d)| matches!(d, DyadOutcome::Complete(_)))
        .map(|(k, _)| k)
        .collect();
    let todo: Vec<&PlanEntry> = plan
        .entries
        .iter()
        .filter(|e| !complete.contains(&dyad_id(&e.condition, e.replicate)))
        .collect();

    let threads = group
        .agent
        .max_concurrency
        .min(group.worker().max_concurrency)
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<DyadOutcome>> = pool.install(|| {
        todo.par_iter()
            .map(|e| {
                let id = dyad_id(&e.condition, e.replicate);
                let prior = pending.get(&id).cloned();
                let out = run_dyad(
                    &ctx,
                    e.condition,
                    e.replicate,
                    dyad_seed(e, &group.group_id),
                    &customer,
                    &worker,
                    &journal,
                    prior,
                );
                journal.record_dyad(&out)?;
                Ok(out)
            })
            .collect()
    });
    if let Some(e) = journal.take_error() {
        return Err(Error::invalid(format!("journal write failed: {e}")));
    }
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let failed = outcomes
        .iter()
        .filter(|o| matches!(o, DyadOutcome::Failed(_)))
        .count();
    Ok(GroupRunSummary {
        group_id: group.group_id.clone(),
        executed: outcomes.len(),
        reused: complete.len(),
        failed,
    })
}

/// Latest outcome per dyad in a journal, in dyad-id order. A complete
/// outcome wins over a failed one for the same dyad.
pub fn journal_outcomes(journal_path: &Path) -> Result<Vec<DyadOutcome>> {
    let contents = read_journal(journal_path)?;
    let mut by_id: BTreeMap<String, DyadOutcome> = BTreeMap::new();
    for d in contents.dyads {
        let keep_existing = matches!(by_id.get(d.dyad_id()), Some(DyadOutcome::Complete(_)));
        if !keep_existing {
            by_id.insert(d.dyad_id().to_string(), d);
        }
    }
    Ok(by_id.into_values().collect())
}
