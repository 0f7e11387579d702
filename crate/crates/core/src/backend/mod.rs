//! Chat-completion backends behind one blocking interface.
//!
//! [`Backend`] is the provider seam (HTTP or scripted mock). [`Client`] wraps a
//! backend with pacing, retries and call recording, and runs bounded batches.

mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use http::{HttpBackend, ProviderConfig, ProviderKind};
pub use mock::{prompt_sha256, MockBackend, MockCall, MockReply, MockRule, MockScript};

/// Default generation limit for narratives and solutions.
pub const DEFAULT_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("provider returned {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("credential environment variable `{0}` is not set")]
    AuthMissing(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock script: {0}")]
    Script(String),
}

impl BackendError {
    /// Rate limiting, server errors and transport failures are retried;
    /// everything else is final.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::ProviderError { status, .. } => *status == 429 || *status >= 500,
            BackendError::Transport(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoleTag {
    NarrativeGen,
    Solver,
    BackTranslator,
}

impl RoleTag {
    pub fn default_temperature(self) -> f64 {
        match self {
            RoleTag::NarrativeGen => 1.0,
            RoleTag::Solver => 0.2,
            // back-translation is a classification query
            RoleTag::BackTranslator => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    pub role_tag: RoleTag,
}

impl GenerationRequest {
    pub fn new(role_tag: RoleTag, prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: role_tag.default_temperature(),
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
            role_tag,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub token_count: u32,
    pub backend_id: String,
    pub latency_ms: u64,
    pub truncated: bool,
    /// Provider request body, verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wire_request: Option<String>,
    /// Provider response body, verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wire_response: Option<String>,
}

/// One provider. Implementations must be callable from several threads.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    /// Single attempt, no retries.
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

/// Receives every finished call (after retries) before `generate` returns.
pub trait CallRecorder: Send + Sync {
    fn record(&self, request: &GenerationRequest, outcome: &Result<GenerationResponse, BackendError>);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            base_delay_ms: 1_000,
            max_delay_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, retry: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << retry.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

/// Token bucket refilled at `requests_per_minute`, holding at most `burst`
/// tokens.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: u32, burst: u32) -> Self {
        let burst = f64::from(burst.max(1));
        Self {
            per_second: f64::from(requests_per_minute.max(1)) / 60.0,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let (tokens, last) = *state;
                let tokens = (tokens + now.duration_since(last).as_secs_f64() * self.per_second).min(self.burst);
                if tokens >= 1.0 {
                    *state = (tokens - 1.0, now);
                    return;
                }
                *state = (tokens, now);
                Duration::from_secs_f64((1.0 - tokens) / self.per_second)
            };
            std::thread::sleep(wait);
        }
    }
}

/// A backend with pacing, retries and optional recording.
#[derive(Clone)]
pub struct Client {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
    recorder: Option<Arc<dyn CallRecorder>>,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client")
            .field("backend", &self.backend.id())
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Client {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            limiter: None,
            recorder: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        self.limiter = Some(Arc::new(RateLimiter::new(requests_per_minute, 1)));
        self
    }

    pub fn with_recorder(mut self, recorder: Arc<dyn CallRecorder>) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let outcome = self.generate_unrecorded(request);
        if let Some(rec) = &self.recorder {
            rec.record(request, &outcome);
        }
        outcome
    }

    fn generate_unrecorded(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let mut attempt = 0;
        loop {
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            match self.backend.complete(request) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_transient() => {
                    if attempt >= self.retry.max_retries {
                        return Err(BackendError::RetriesExhausted {
                            attempts: attempt + 1,
                            last: e.to_string(),
                        });
                    }
                    log::warn!("{}: transient failure ({e}), retry {}", self.backend.id(), attempt + 1);
                    std::thread::sleep(self.retry.delay_for(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Runs `requests` with at most `max_in_flight` outstanding calls; the
    /// result at position `i` belongs to request `i`.
    pub fn generate_batch(
        &self,
        requests: &[GenerationRequest],
        max_in_flight: usize,
    ) -> Vec<Result<GenerationResponse, BackendError>> {
        self.generate_batch_with(requests, max_in_flight, &|_, _| {})
    }

    /// Like [`Self::generate_batch`], calling `on_done(i, outcome)` as each
    /// slot finishes, from the worker thread that ran it.
    pub fn generate_batch_with(
        &self,
        requests: &[GenerationRequest],
        max_in_flight: usize,
        on_done: &(dyn Fn(usize, &Result<GenerationResponse, BackendError>) + Sync),
    ) -> Vec<Result<GenerationResponse, BackendError>> {
        let slots: Vec<Mutex<Option<Result<GenerationResponse, BackendError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = max_in_flight.max(1).min(requests.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = requests.get(i) else { break };
                    let outcome = self.generate(req);
                    on_done(i, &outcome);
                    *slots[i].lock().unwrap() = Some(outcome);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every slot is filled"))
            .collect()
    }
}

pub fn whitespace_tokens(text: &str) -> u32 {
    u32::try_from(text.split_whitespace().count()).unwrap_or(u32::MAX)
}
