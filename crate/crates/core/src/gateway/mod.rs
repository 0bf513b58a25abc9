//! Agent calls, retry policy, response parsing, and the synthetic backend.

mod dyad;
mod http;
mod parse;
mod synthetic;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vignette::PromptBundle;

pub(crate) use dyad::now_ms;
pub use dyad::{dyad_id, run_dyad, CallEvent, CallObserver, CallPhase, DyadContext, NoopObserver};
pub use http::{credential_var, HttpTransport, ProviderApi};
pub use parse::{
    parse_customer_response, parse_worker_response, CustomerResult, TipDecision, WorkerResult,
};
pub use synthetic::{
    synthetic_respond, ConditionProfile, ExpectedOutcomes, SatisfactionDist, SyntheticProfile,
    SyntheticTransport, TipProbabilities,
};

/// Sampling and retry parameters for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentParams {
    pub provider_id: String,
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_concurrency: usize,
    /// Override for the provider's default endpoint URL.
    pub endpoint: Option<String>,
    /// Token-bucket refill rate; `None` disables rate limiting.
    pub requests_per_minute: Option<f64>,
    pub max_tokens: u32,
    pub timeout_secs: u64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            provider_id: "synthetic".into(),
            model_id: "human-like".into(),
            temperature: 0.7,
            top_p: 0.95,
            max_retries: 5,
            backoff_base_ms: 1000,
            max_concurrency: 4,
            endpoint: None,
            requests_per_minute: None,
            max_tokens: 512,
            timeout_secs: 120,
        }
    }
}

impl AgentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::invalid(format!(
                "temperature must be in [0, 2], got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::invalid(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_concurrency < 1 {
            return Err(Error::invalid("max_concurrency must be >= 1"));
        }
        if self.provider_id.trim().is_empty() || self.model_id.trim().is_empty() {
            return Err(Error::invalid("provider_id and model_id must be nonempty"));
        }
        if let Some(rpm) = self.requests_per_minute {
            if !(rpm > 0.0) {
                return Err(Error::invalid(format!(
                    "requests_per_minute must be > 0, got {rpm}"
                )));
            }
        }
        Ok(())
    }

    pub fn backoff_base(&self) -> Duration {
        Duration::from_millis(self.backoff_base_ms)
    }

    /// Delay before retry number `attempt` (1-based): base × 2^(attempt-1).
    pub fn backoff_delay(&self, attempt: u32) -> Duration {
        self.backoff_base()
            .saturating_mul(1u32 << (attempt.saturating_sub(1)).min(20))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub attempts: u32,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub provider_metadata: BTreeMap<String, String>,
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Successful provider reply.
#[derive(Debug, Clone, Default)]
pub struct Reply {
    pub text: String,
    pub metadata: BTreeMap<String, String>,
}

/// Why one provider call failed.
#[derive(Debug, Clone, PartialEq)]
pub enum CallFailure {
    /// Worth retrying: timeouts, 429, 5xx, connection resets.
    Transient {
        status: Option<u16>,
        message: String,
    },
    /// Rejected credentials; never retried.
    Auth { var: String },
    /// Any other non-retryable failure.
    Fatal {
        status: Option<u16>,
        message: String,
    },
}

/// One provider backend. `seed` is a per-call seed that deterministic
/// backends use and remote ones may ignore.
pub trait Transport: Send + Sync {
    fn call(
        &self,
        params: &AgentParams,
        bundle: &PromptBundle,
        seed: u64,
    ) -> std::result::Result<Reply, CallFailure>;
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub fn thread_sleeper() -> Sleeper {
    Arc::new(std::thread::sleep)
}

/// Token bucket shared by every agent of one provider.
#[derive(Debug)]
pub struct RateLimiter {
    per_sec: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(rpm: f64) -> Self {
        let capacity = (rpm / 60.0).max(1.0);
        Self {
            per_sec: rpm / 60.0,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Takes one token, sleeping until one is available.
    pub fn acquire(&self, sleeper: &Sleeper) {
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.per_sec;
                st.0 = (st.0 + refill).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.per_sec)
            };
            sleeper(wait);
        }
    }
}

/// A configured agent: parameters, backend, and retry plumbing.
#[derive(Clone)]
pub struct Agent {
    pub params: AgentParams,
    transport: Arc<dyn Transport>,
    sleeper: Sleeper,
    limiter: Option<Arc<RateLimiter>>,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl Agent {
    pub fn new(params: AgentParams, transport: Arc<dyn Transport>) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            transport,
            sleeper: thread_sleeper(),
            limiter: None,
        })
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    /// Agent backed by a synthetic profile.
    pub fn synthetic(params: AgentParams, profile: SyntheticProfile) -> Result<Self> {
        Self::new(params, Arc::new(SyntheticTransport::new(profile)))
    }

    /// Agent backed by a remote provider; credentials are checked eagerly.
    pub fn http(params: AgentParams) -> Result<Self> {
        let transport = HttpTransport::from_params(&params)?;
        Self::new(params, Arc::new(transport))
    }

    pub fn send_prompt(&self, bundle: &PromptBundle, seed: u64) -> Result<RawResponse> {
        send_prompt(
            &self.params,
            self.transport.as_ref(),
            bundle,
            seed,
            &self.sleeper,
            self.limiter.as_deref(),
        )
    }
}

/// Sends one prompt, retrying transient failures with exponential backoff.
pub fn send_prompt(
    params: &AgentParams,
    transport: &dyn Transport,
    bundle: &PromptBundle,
    seed: u64,
    sleeper: &Sleeper,
    limiter: Option<&RateLimiter>,
) -> Result<RawResponse> {
    let started = Instant::now();
    let max_attempts = params.max_retries + 1;
    let mut attempt = 1;
    loop {
        if let Some(l) = limiter {
            l.acquire(sleeper);
        }
        match transport.call(params, bundle, seed) {
            Ok(reply) => {
                let mut metadata = reply.metadata;
                metadata
                    .entry("provider".into())
                    .or_insert_with(|| params.provider_id.clone());
                metadata
                    .entry("model".into())
                    .or_insert_with(|| params.model_id.clone());
                return Ok(RawResponse {
                    text: reply.text,
                    attempts: attempt,
                    latency: started.elapsed(),
                    provider_metadata: metadata,
                });
            }
            Err(CallFailure::Auth { var }) => return Err(Error::Credential { var }),
            Err(CallFailure::Fatal { status, message }) => {
                return Err(Error::Transport {
                    attempts: attempt,
                    status,
                    message,
                })
            }
            Err(CallFailure::Transient { status, message }) => {
                if attempt >= max_attempts {
                    return Err(Error::Transport {
                        attempts: attempt,
                        status,
                        message,
                    });
                }
                sleeper(params.backoff_delay(attempt));
                attempt += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{ExperimentCondition, ServiceOutcome, TipVisibility};
    use crate::money::Cents;
    use crate::vignette::{build_customer_prompt, PromptText, VignetteLibrary};
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        failure: CallFailure,
    }

    impl Transport for Flaky {
        fn call(
            &self,
            _: &AgentParams,
            _: &PromptBundle,
            _: u64,
        ) -> std::result::Result<Reply, CallFailure> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.failure.clone())
            } else {
                Ok(Reply {
                    text: "SATISFACTION: 5\nREASONING: fine".into(),
                    metadata: BTreeMap::new(),
                })
            }
        }
    }

    fn flaky(failures: u32, failure: CallFailure) -> Flaky {
        Flaky {
            failures,
            calls: AtomicU32::new(0),
            failure,
        }
    }

    fn transient() -> CallFailure {
        CallFailure::Transient {
            status: Some(503),
            message: "unavailable".into(),
        }
    }

    fn bundle() -> PromptBundle {
        let cond = ExperimentCondition::new(ServiceOutcome::Meets, true, TipVisibility::Before);
        build_customer_prompt(
            &VignetteLibrary::builtin(),
            &PromptText::default(),
            &cond,
            Cents::from_dollars(30),
            Cents::from_dollars(9),
        )
        .unwrap()
    }

    fn recording_sleeper() -> (Sleeper, Arc<Mutex<Vec<Duration>>>) {
        let log = Arc::new(Mutex::new(Vec::new()));
        let l = log.clone();
        (Arc::new(move |d| l.lock().unwrap().push(d)), log)
    }

    fn params(max_retries: u32) -> AgentParams {
        AgentParams {
            max_retries,
            backoff_base_ms: 100,
            ..AgentParams::default()
        }
    }

    #[test]
    fn defaults_and_validation() {
        let p = AgentParams::default();
        assert_eq!((p.temperature, p.top_p, p.max_retries), (0.7, 0.95, 5));
        p.validate().unwrap();
        for bad in [
            AgentParams {
                temperature: 2.5,
                ..p.clone()
            },
            AgentParams {
                top_p: 0.0,
                ..p.clone()
            },
            AgentParams {
                max_concurrency: 0,
                ..p.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn healthy_provider_single_attempt() {
        let (sleeper, log) = recording_sleeper();
        let t = flaky(0, transient());
        let r = send_prompt(&params(3), &t, &bundle(), 1, &sleeper, None).unwrap();
        assert_eq!(r.attempts, 1);
        assert!(!r.text.is_empty());
        assert!(log.lock().unwrap().is_empty());
    }

    #[test]
    fn retries_with_exponential_backoff() {
        let (sleeper, log) = recording_sleeper();
        let t = flaky(2, transient());
        let r = send_prompt(&params(3), &t, &bundle(), 1, &sleeper, None).unwrap();
        assert_eq!(r.attempts, 3);
        assert_eq!(
            *log.lock().unwrap(),
            vec![Duration::from_millis(100), Duration::from_millis(200)]
        );
    }

    #[test]
    fn exhausted_retries_carry_last_status() {
        let (sleeper, _) = recording_sleeper();
        let t = flaky(u32::MAX, transient());
        match send_prompt(&params(2), &t, &bundle(), 1, &sleeper, None) {
            Err(Error::Transport {
                attempts, status, ..
            }) => {
                assert_eq!(attempts, 3);
                assert_eq!(status, Some(503));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn auth_failure_not_retried() {
        let (sleeper, _) = recording_sleeper();
        let t = flaky(
            u32::MAX,
            CallFailure::Auth {
                var: "OPENAI_API_KEY".into(),
            },
        );
        let err = send_prompt(&params(5), &t, &bundle(), 1, &sleeper, None).unwrap_err();
        assert!(matches!(err, Error::Credential { .. }));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn rate_limiter_waits_when_empty() {
        let log = Arc::new(Mutex::new(Vec::new()));
        let l = log.clone();
        let sleeper: Sleeper = Arc::new(move |d| {
            l.lock().unwrap().push(d);
            std::thread::sleep(d);
        });
        let limiter = RateLimiter::per_minute(600.0);
        for _ in 0..10 {
            limiter.acquire(&sleeper);
        }
        assert!(log.lock().unwrap().is_empty());
        limiter.acquire(&sleeper);
        let waits = log.lock().unwrap();
        assert!(!waits.is_empty());
        assert!(waits[0] <= Duration::from_millis(101));
    }
}
