//! Pluggable VLM (images+text -> text) and LLM (text -> text) clients.
//!
//! [`BackendClient`] wraps a [`Transport`] with retry on transient faults,
//! token-bucket rate limiting, a concurrency cap, token accounting, and a
//! call log. [`MockTransport`] is a deterministic scripted double that also
//! counts raw attempts and peak in-flight requests for invariant tests;
//! [`HttpTransport`] speaks the minimal neutral JSON wire protocol.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{RgbBuffer, UsageStats};
use crate::util::{fnv1a64, fnv1a64_parts, pseudo_text};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("permanent backend failure: {0}")]
    Permanent(String),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
}

/// Raw transport outcome classification. Transient faults are retried,
/// permanent ones fail immediately.
#[derive(Debug, Clone)]
pub enum TransportError {
    Transient(String),
    Permanent(String),
}

/// One completion as it comes off the wire.
#[derive(Debug, Clone)]
pub struct WireResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

pub trait Transport: Send + Sync {
    fn send_vlm(&self, req: &VlmRequest) -> Result<WireResponse, TransportError>;
    fn send_llm(&self, req: &LlmRequest) -> Result<WireResponse, TransportError>;
}

/// Vision request: one image for standalone captions, two for differential
/// windows.
#[derive(Debug, Clone)]
pub struct VlmRequest {
    pub images: Vec<RgbBuffer>,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct LlmRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Vlm,
    Llm,
}

/// One successfully completed logical call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallLogEntry {
    pub backend: BackendKind,
    pub image_count: usize,
    pub prompt_hash: u64,
    pub response_hash: u64,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

/// Throughput and retry policy shared by every worker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimitPolicy {
    pub max_requests_per_second: f64,
    pub max_concurrent: usize,
    pub retry_max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
}

impl Default for RateLimitPolicy {
    fn default() -> Self {
        RateLimitPolicy {
            max_requests_per_second: 4.0,
            max_concurrent: 4,
            retry_max_attempts: 3,
            backoff_base_ms: 250,
            backoff_cap_ms: 8_000,
        }
    }
}

impl RateLimitPolicy {
    fn validate(&self) -> Result<(), BackendError> {
        if self.max_requests_per_second <= 0.0
            || self.max_concurrent == 0
            || self.retry_max_attempts == 0
            || self.backoff_base_ms == 0
            || self.backoff_cap_ms == 0
        {
            return Err(BackendError::InvalidRequest(
                "rate limit policy fields must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a logical call: the text, accounted tokens, and how many
/// attempts it took.
#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub attempts: u32,
}

impl Completion {
    /// Fold this call into a bundle's usage counters.
    pub fn record(&self, usage: &mut UsageStats, kind: BackendKind) {
        match kind {
            BackendKind::Vlm => usage.vlm_calls += 1,
            BackendKind::Llm => usage.llm_calls += 1,
        }
        usage.prompt_tokens += self.prompt_tokens;
        usage.completion_tokens += self.completion_tokens;
        usage.retries += u64::from(self.attempts.saturating_sub(1));
    }
}

/// Token bucket with burst 1: the first request passes immediately, the
/// rest pace out at the configured rate.
struct TokenBucket {
    state: Mutex<BucketState>,
    rate_per_ms: f64,
}

struct BucketState {
    tokens: f64,
    last_refill: Instant,
}

impl TokenBucket {
    fn new(rate_per_second: f64) -> Self {
        TokenBucket {
            state: Mutex::new(BucketState {
                tokens: 1.0,
                last_refill: Instant::now(),
            }),
            rate_per_ms: rate_per_second / 1000.0,
        }
    }

    fn acquire(&self) {
        loop {
            let wait_ms = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let elapsed_ms = now.duration_since(state.last_refill).as_secs_f64() * 1000.0;
                state.tokens = (state.tokens + elapsed_ms * self.rate_per_ms).min(1.0);
                state.last_refill = now;
                if state.tokens >= 1.0 {
                    state.tokens -= 1.0;
                    return;
                }
                (1.0 - state.tokens) / self.rate_per_ms
            };
            std::thread::sleep(Duration::from_secs_f64(wait_ms.max(0.1) / 1000.0));
        }
    }
}

/// Counting semaphore capping in-flight transport sends.
struct ConcurrencyGate {
    permits: Mutex<usize>,
    released: Condvar,
}

impl ConcurrencyGate {
    fn new(max: usize) -> Self {
        ConcurrencyGate {
            permits: Mutex::new(max),
            released: Condvar::new(),
        }
    }

    fn enter(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.released.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn exit(&self) {
        *self.permits.lock().unwrap() += 1;
        self.released.notify_one();
    }
}

/// Seeded xorshift for backoff jitter; reproducible test runs need seedable
/// randomness everywhere.
struct Jitter {
    state: Mutex<u64>,
}

impl Jitter {
    fn new(seed: u64) -> Self {
        Jitter {
            state: Mutex::new(seed | 1),
        }
    }

    /// Uniform-ish in [0.5, 1.0).
    fn factor(&self) -> f64 {
        let mut state = self.state.lock().unwrap();
        let mut x = *state;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        *state = x;
        0.5 + (x >> 11) as f64 / (1u64 << 53) as f64 * 0.5
    }
}

/// `ceil(bytes / 4)` fallback when the backend reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// Shared, concurrency-safe client over one transport. All calls funnel
/// through the same rate limiter, concurrency gate, and call log.
pub struct BackendClient {
    transport: Arc<dyn Transport>,
    policy: RateLimitPolicy,
    bucket: TokenBucket,
    gate: ConcurrencyGate,
    log: Mutex<Vec<CallLogEntry>>,
    jitter: Jitter,
    max_images: usize,
}

impl BackendClient {
    pub fn new(
        transport: Arc<dyn Transport>,
        policy: RateLimitPolicy,
        seed: u64,
    ) -> Result<Self, BackendError> {
        policy.validate()?;
        Ok(BackendClient {
            transport,
            bucket: TokenBucket::new(policy.max_requests_per_second),
            gate: ConcurrencyGate::new(policy.max_concurrent),
            log: Mutex::new(Vec::new()),
            jitter: Jitter::new(seed),
            max_images: 2,
            policy,
        })
    }

    pub fn policy(&self) -> &RateLimitPolicy {
        &self.policy
    }

    /// Raise or lower the per-request image cap (default 2, the
    /// differential-window shape).
    pub fn with_max_images(mut self, max_images: usize) -> Self {
        self.max_images = max_images.max(1);
        self
    }

    /// Complete a vision request. Transient faults retry with capped
    /// exponential backoff and jitter; permanent faults fail immediately.
    pub fn vlm_complete(&self, req: &VlmRequest) -> Result<Completion, BackendError> {
        if req.prompt.is_empty() {
            return Err(BackendError::InvalidRequest(
                "vlm prompt must not be empty".into(),
            ));
        }
        if req.images.is_empty() || req.images.len() > self.max_images {
            return Err(BackendError::InvalidRequest(format!(
                "vlm request carries {} images; expected 1..={}",
                req.images.len(),
                self.max_images
            )));
        }
        self.call(BackendKind::Vlm, &req.prompt, req.images.len(), |t| {
            t.send_vlm(req)
        })
    }

    /// Complete a text request; same retry/limit behavior as the VLM path.
    pub fn llm_complete(&self, req: &LlmRequest) -> Result<Completion, BackendError> {
        if req.prompt.is_empty() {
            return Err(BackendError::InvalidRequest(
                "llm prompt must not be empty".into(),
            ));
        }
        self.call(BackendKind::Llm, &req.prompt, 0, |t| t.send_llm(req))
    }

    fn call(
        &self,
        kind: BackendKind,
        prompt: &str,
        image_count: usize,
        send: impl Fn(&dyn Transport) -> Result<WireResponse, TransportError>,
    ) -> Result<Completion, BackendError> {
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.bucket.acquire();
            self.gate.enter();
            let outcome = send(self.transport.as_ref());
            self.gate.exit();
            match outcome {
                Ok(response) => {
                    let completion = Completion {
                        prompt_tokens: response
                            .prompt_tokens
                            .unwrap_or_else(|| estimate_tokens(prompt)),
                        completion_tokens: response
                            .completion_tokens
                            .unwrap_or_else(|| estimate_tokens(&response.text)),
                        attempts: attempt,
                        text: response.text,
                    };
                    self.log.lock().unwrap().push(CallLogEntry {
                        backend: kind,
                        image_count,
                        prompt_hash: fnv1a64(prompt.as_bytes()),
                        response_hash: fnv1a64(completion.text.as_bytes()),
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempt,
                    });
                    return Ok(completion);
                }
                Err(TransportError::Permanent(message)) => {
                    return Err(BackendError::Permanent(message));
                }
                Err(TransportError::Transient(message)) => {
                    if attempt >= self.policy.retry_max_attempts {
                        return Err(BackendError::RetriesExhausted {
                            attempts: attempt,
                            last: message,
                        });
                    }
                    let backoff = (self
                        .policy
                        .backoff_base_ms
                        .saturating_mul(1 << (attempt - 1).min(16)))
                    .min(self.policy.backoff_cap_ms);
                    let sleep_ms = backoff as f64 * self.jitter.factor();
                    std::thread::sleep(Duration::from_secs_f64(sleep_ms / 1000.0));
                }
            }
        }
    }

    /// Return and clear the call log, in call order.
    pub fn drain_call_log(&self) -> Vec<CallLogEntry> {
        std::mem::take(&mut *self.log.lock().unwrap())
    }

    /// Peek at the call log without clearing it.
    pub fn snapshot_call_log(&self) -> Vec<CallLogEntry> {
        self.log.lock().unwrap().clone()
    }
}

/// Scripted per-attempt behavior for the mock transport.
#[derive(Debug, Clone)]
pub enum PlannedOutcome {
    Respond,
    Transient(String),
    Permanent(String),
}

/// Deterministic in-process double. Responses are a pure function of the
/// request bytes unless a response is scripted for the prompt hash; a
/// per-attempt outcome plan injects faults. Tracks raw attempt counts and
/// peak in-flight sends so tests can assert the client's pacing invariants.
pub struct MockTransport {
    seed: u64,
    scripted_vlm: Mutex<HashMap<u64, String>>,
    scripted_llm: Mutex<HashMap<u64, String>>,
    vlm_plan: Mutex<VecDeque<PlannedOutcome>>,
    llm_plan: Mutex<VecDeque<PlannedOutcome>>,
    simulated_latency: Option<Duration>,
    vlm_attempts: AtomicUsize,
    llm_attempts: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl MockTransport {
    pub fn new(seed: u64) -> Self {
        MockTransport {
            seed,
            scripted_vlm: Mutex::new(HashMap::new()),
            scripted_llm: Mutex::new(HashMap::new()),
            vlm_plan: Mutex::new(VecDeque::new()),
            llm_plan: Mutex::new(VecDeque::new()),
            simulated_latency: None,
            vlm_attempts: AtomicUsize::new(0),
            llm_attempts: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    /// Hold each send open for `latency` so concurrency tests can observe
    /// overlapping requests.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.simulated_latency = Some(latency);
        self
    }

    /// Fix the response for a VLM prompt (keyed by its FNV-1a hash).
    pub fn script_vlm(&self, prompt: &str, response: &str) {
        self.scripted_vlm
            .lock()
            .unwrap()
            .insert(fnv1a64(prompt.as_bytes()), response.to_string());
    }

    pub fn script_llm(&self, prompt: &str, response: &str) {
        self.scripted_llm
            .lock()
            .unwrap()
            .insert(fnv1a64(prompt.as_bytes()), response.to_string());
    }

    /// Queue per-attempt outcomes for upcoming VLM sends; once the plan is
    /// exhausted every send responds normally.
    pub fn plan_vlm(&self, outcomes: Vec<PlannedOutcome>) {
        self.vlm_plan.lock().unwrap().extend(outcomes);
    }

    pub fn plan_llm(&self, outcomes: Vec<PlannedOutcome>) {
        self.llm_plan.lock().unwrap().extend(outcomes);
    }

    pub fn vlm_attempts(&self) -> usize {
        self.vlm_attempts.load(Ordering::SeqCst)
    }

    pub fn llm_attempts(&self) -> usize {
        self.llm_attempts.load(Ordering::SeqCst)
    }

    /// Highest number of sends ever observed in flight at once.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn track<T>(&self, body: impl FnOnce() -> T) -> T {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if let Some(latency) = self.simulated_latency {
            std::thread::sleep(latency);
        }
        let result = body();
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    fn planned(plan: &Mutex<VecDeque<PlannedOutcome>>) -> PlannedOutcome {
        plan.lock()
            .unwrap()
            .pop_front()
            .unwrap_or(PlannedOutcome::Respond)
    }
}

impl Transport for MockTransport {
    fn send_vlm(&self, req: &VlmRequest) -> Result<WireResponse, TransportError> {
        self.vlm_attempts.fetch_add(1, Ordering::SeqCst);
        self.track(|| match Self::planned(&self.vlm_plan) {
            PlannedOutcome::Transient(m) => Err(TransportError::Transient(m)),
            PlannedOutcome::Permanent(m) => Err(TransportError::Permanent(m)),
            PlannedOutcome::Respond => {
                let prompt_hash = fnv1a64(req.prompt.as_bytes());
                if let Some(text) = self.scripted_vlm.lock().unwrap().get(&prompt_hash) {
                    return Ok(WireResponse {
                        text: text.clone(),
                        prompt_tokens: None,
                        completion_tokens: None,
                    });
                }
                let mut parts: Vec<&[u8]> = vec![req.prompt.as_bytes()];
                for image in &req.images {
                    parts.push(&image.data);
                }
                let h = fnv1a64_parts(&parts) ^ self.seed;
                // Fixed-order-of-magnitude caption length; summary-style
                // LLM output scales with its prompt instead.
                let text = pseudo_text(h, 160 + (h % 80) as usize);
                Ok(WireResponse {
                    text,
                    prompt_tokens: None,
                    completion_tokens: None,
                })
            }
        })
    }

    fn send_llm(&self, req: &LlmRequest) -> Result<WireResponse, TransportError> {
        self.llm_attempts.fetch_add(1, Ordering::SeqCst);
        self.track(|| match Self::planned(&self.llm_plan) {
            PlannedOutcome::Transient(m) => Err(TransportError::Transient(m)),
            PlannedOutcome::Permanent(m) => Err(TransportError::Permanent(m)),
            PlannedOutcome::Respond => {
                let prompt_hash = fnv1a64(req.prompt.as_bytes());
                if let Some(text) = self.scripted_llm.lock().unwrap().get(&prompt_hash) {
                    return Ok(WireResponse {
                        text: text.clone(),
                        prompt_tokens: None,
                        completion_tokens: None,
                    });
                }
                let h = prompt_hash ^ self.seed.rotate_left(17);
                let text = pseudo_text(h, (req.prompt.len() / 6).max(40));
                Ok(WireResponse {
                    text,
                    prompt_tokens: None,
                    completion_tokens: None,
                })
            }
        })
    }
}

#[derive(Serialize)]
struct WireImage {
    b64: String,
    media_type: &'static str,
}

#[derive(Serialize)]
struct VlmWireRequest<'a> {
    prompt: &'a str,
    images: Vec<WireImage>,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Serialize)]
struct LlmWireRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct WireCompletion {
    text: String,
    usage: Option<WireUsage>,
}

/// HTTP transport for the neutral JSON API: `POST /v1/vlm` and
/// `POST /v1/llm`. 429 and 5xx map to transient, 400/401/403 (and other
/// 4xx) to permanent.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    vlm_url: String,
    llm_url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        let base = base_url.trim_end_matches('/');
        HttpTransport {
            client: reqwest::blocking::Client::new(),
            vlm_url: format!("{base}/v1/vlm"),
            llm_url: format!("{base}/v1/llm"),
            api_key,
        }
    }

    fn post<B: Serialize>(&self, url: &str, body: &B) -> Result<WireResponse, TransportError> {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let message = format!("{url} returned {status}");
            return if status == 429 || status >= 500 {
                Err(TransportError::Transient(message))
            } else {
                Err(TransportError::Permanent(message))
            };
        }
        let completion: WireCompletion = response
            .json()
            .map_err(|e| TransportError::Permanent(format!("malformed response: {e}")))?;
        if completion.text.is_empty() {
            return Err(TransportError::Permanent(
                "backend returned empty text".into(),
            ));
        }
        let usage = completion.usage;
        Ok(WireResponse {
            text: completion.text,
            prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }
}

impl Transport for HttpTransport {
    fn send_vlm(&self, req: &VlmRequest) -> Result<WireResponse, TransportError> {
        use base64::Engine as _;
        let mut images = Vec::with_capacity(req.images.len());
        for buf in &req.images {
            let png = crate::embed::encode_png(buf).map_err(TransportError::Permanent)?;
            images.push(WireImage {
                b64: base64::engine::general_purpose::STANDARD.encode(png),
                media_type: "image/png",
            });
        }
        let body = VlmWireRequest {
            prompt: &req.prompt,
            images,
            max_tokens: req.max_tokens,
            temperature: req.temperature,
        };
        self.post(&self.vlm_url, &body)
    }

    fn send_llm(&self, req: &LlmRequest) -> Result<WireResponse, TransportError> {
        let body = LlmWireRequest {
            prompt: &req.prompt,
            max_tokens: req.max_tokens,
            temperature: req.temperature,
        };
        self.post(&self.llm_url, &body)
    }
}
