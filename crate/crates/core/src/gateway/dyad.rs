//! One customer-worker exchange: customer prompt, parse, worker prompt
//! carrying the final tip, parse.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DyadOutcome, DyadRecord, FailedDyad};
use crate::design::{derive_seed, ExperimentCondition};
use crate::error::{Error, Result};
use crate::money::Cents;
use crate::vignette::{
    build_customer_prompt, build_worker_prompt, PromptBundle, PromptText, Role, VignetteLibrary,
};

use super::{parse_customer_response, parse_worker_response, Agent, CustomerResult, WorkerResult};

/// Stable dyad identifier, e.g. `meets/true/before#007`.
pub fn dyad_id(condition: &ExperimentCondition, replicate: u32) -> String {
    format!("{}#{replicate:03}", condition.key())
}

pub(crate) fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub(crate) fn prompt_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Shared inputs for every dyad of one group.
#[derive(Debug, Clone, Copy)]
pub struct DyadContext<'a> {
    pub run_id: &'a str,
    pub group_id: &'a str,
    pub library: &'a VignetteLibrary,
    pub text: &'a PromptText,
    pub price: Cents,
    pub initial_tip: Cents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallPhase {
    Started,
    Completed,
    Failed,
}

/// One journaled agent-call event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallEvent {
    pub phase: CallPhase,
    pub run_id: String,
    pub group_id: String,
    pub dyad_id: String,
    pub role: Role,
    pub condition: ExperimentCondition,
    pub replicate: u32,
    pub seed: u64,
    /// 1-based prompt attempt; attempts after the first carry the reminder.
    pub prompt_attempt: u32,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timestamp_ms: u64,
}

pub trait CallObserver: Sync {
    fn on_event(&self, event: &CallEvent);
}

pub struct NoopObserver;

impl CallObserver for NoopObserver {
    fn on_event(&self, _: &CallEvent) {}
}

struct CallSite<'a> {
    ctx: &'a DyadContext<'a>,
    condition: ExperimentCondition,
    replicate: u32,
    seed: u64,
    observer: &'a dyn CallObserver,
}

impl CallSite<'_> {
    fn event(
        &self,
        phase: CallPhase,
        role: Role,
        attempt: u32,
        bundle: &PromptBundle,
    ) -> CallEvent {
        CallEvent {
            phase,
            run_id: self.ctx.run_id.to_string(),
            group_id: self.ctx.group_id.to_string(),
            dyad_id: dyad_id(&self.condition, self.replicate),
            role,
            condition: self.condition,
            replicate: self.replicate,
            seed: self.seed,
            prompt_attempt: attempt,
            prompt_hash: prompt_hash(&bundle.body_text),
            raw_text: None,
            parsed: None,
            attempts: None,
            error: None,
            timestamp_ms: now_ms(),
        }
    }

    /// Sends `base` and parses the reply, re-prompting with the reminder on
    /// parse failure. Every prompt counts against the agent's retry budget.
    fn call<T: Serialize>(
        &self,
        agent: &Agent,
        role: Role,
        base: &PromptBundle,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<T> {
        let max_prompts = agent.params.max_retries + 1;
        let mut last_err = None;
        for attempt in 1..=max_prompts {
            let bundle = if attempt == 1 {
                base.clone()
            } else {
                base.with_reminder(&self.ctx.text.reprompt_reminder)
            };
            let role_tag = role.as_str().as_bytes();
            let call_seed = derive_seed(self.seed, &[role_tag, &attempt.to_le_bytes()]);
            self.observer
                .on_event(&self.event(CallPhase::Started, role, attempt, &bundle));
            let raw = match agent.send_prompt(&bundle, call_seed) {
                Ok(raw) => raw,
                Err(e) => {
                    let mut ev = self.event(CallPhase::Failed, role, attempt, &bundle);
                    ev.error = Some(e.to_string());
                    self.observer.on_event(&ev);
                    return Err(e);
                }
            };
            let mut ev = self.event(CallPhase::Completed, role, attempt, &bundle);
            ev.raw_text = Some(raw.text.clone());
            ev.attempts = Some(raw.attempts);
            match parse(&raw.text) {
                Ok(parsed) => {
                    ev.parsed = serde_json::to_value(&parsed).ok();
                    self.observer.on_event(&ev);
                    return Ok(parsed);
                }
                Err(e) => {
                    ev.phase = CallPhase::Failed;
                    ev.error = Some(e.to_string());
                    self.observer.on_event(&ev);
                    last_err = Some(e);
                }
            }
        }
        let last = last_err.map(|e| e.to_string()).unwrap_or_default();
        Err(Error::ResponseParse(format!(
            "{} reply unparseable after {max_prompts} prompt(s): {last}",
            role.as_str()
        )))
    }
}

/// Runs one dyad. `prior_customer` resumes a dyad whose customer call was
/// already journaled.
#[allow(clippy::too_many_arguments)]
pub fn run_dyad(
    ctx: &DyadContext<'_>,
    condition: ExperimentCondition,
    replicate: u32,
    seed: u64,
    customer_agent: &Agent,
    worker_agent: &Agent,
    observer: &dyn CallObserver,
    prior_customer: Option<CustomerResult>,
) -> DyadOutcome {
    let started_at_ms = now_ms();
    let site = CallSite {
        ctx,
        condition,
        replicate,
        seed,
        observer,
    };
    let fail = |role: Role, customer: Option<CustomerResult>, reason: String| {
        DyadOutcome::Failed(FailedDyad {
            run_id: ctx.run_id.to_string(),
            group_id: ctx.group_id.to_string(),
            dyad_id: dyad_id(&condition, replicate),
            condition,
            replicate,
            failed_role: role,
            reason,
            customer,
        })
    };

    let customer = match prior_customer {
        Some(c) => c,
        None => {
            let bundle = match build_customer_prompt(
                ctx.library,
                ctx.text,
                &condition,
                ctx.price,
                ctx.initial_tip,
            ) {
                Ok(b) => b,
                Err(e) => return fail(Role::Customer, None, e.to_string()),
            };
            match site.call(customer_agent, Role::Customer, &bundle, |t| {
                parse_customer_response(t, &condition, ctx.initial_tip)
            }) {
                Ok(c) => c,
                Err(e) => return fail(Role::Customer, None, e.to_string()),
            }
        }
    };

    let worker: WorkerResult = {
        let bundle = match build_worker_prompt(
            ctx.library,
            ctx.text,
            &condition,
            &customer,
            ctx.initial_tip,
        ) {
            Ok(b) => b,
            Err(e) => return fail(Role::Worker, Some(customer), e.to_string()),
        };
        match site.call(worker_agent, Role::Worker, &bundle, parse_worker_response) {
            Ok(w) => w,
            Err(e) => return fail(Role::Worker, Some(customer), e.to_string()),
        }
    };

    DyadOutcome::Complete(DyadRecord {
        run_id: ctx.run_id.to_string(),
        group_id: ctx.group_id.to_string(),
        dyad_id: dyad_id(&condition, replicate),
        condition,
        replicate,
        price: ctx.price,
        initial_tip: ctx.initial_tip,
        customer,
        worker,
        started_at_ms,
        completed_at_ms: now_ms(),
    })
}
