//! Uniform access to chat-completion and embedding backends with token
//! accounting, bounded retries, and deterministic record/replay and mock
//! modes.
//!
//! Three backend kinds cover the three ways the engine runs: live HTTP for
//! real experiments, replay cassettes for reproducing a recorded session, and
//! a deterministic mock scripted by request-tag pattern for tests and dry
//! runs. Secrets come from environment variables named in the run
//! configuration and are never written to cassettes or logs.

pub mod cassette;
pub mod embed;
pub mod http;
pub mod mock;

mod ledger;

pub use cassette::{cassette_key, CassetteEntry, CassetteRecorder, CassetteReplayer};
pub use ledger::{TagUsage, TokenUsage, UsageLedger};

use crate::error::{Error, Result};
use embed::Embedder;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

/// Default model temperature.
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// A failing transport is attempted at most this many times by default.
pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

/// One chat-completion request.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub backend_id: String,
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
    /// Free-form label of the call site, e.g. `expansion:exploitation`.
    /// Ledger entries are grouped under it.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(backend_id: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            system: None,
            user: user.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: None,
            tag: "untagged".into(),
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.user.trim().is_empty() {
            return Err(Error::Validation("chat request user text is empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Validation(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A completed chat call.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub backend_id: String,
    pub latency: Duration,
}

/// What a backend reports for one attempt.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
}

/// A chat-completion transport. Errors are transport-level and retryable.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<BackendReply, String>;
}

/// Counting semaphore bounding concurrent in-flight calls.
struct Limiter {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(limit: usize) -> Self {
        Self {
            permits: Mutex::new(limit.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut permits = self.permits.lock().expect("limiter lock");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("limiter wait");
        }
        *permits -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.limiter.permits.lock().expect("limiter lock") += 1;
        self.limiter.cv.notify_one();
    }
}

/// The gateway: backend registry, usage ledger, retry policy, and the
/// record/replay layer. Safe for concurrent callers up to the configured
/// parallelism limit.
pub struct Gateway {
    chat_backends: BTreeMap<String, Arc<dyn ChatBackend>>,
    embedders: BTreeMap<String, Arc<dyn Embedder>>,
    ledger: Mutex<UsageLedger>,
    ticket: AtomicU64,
    recorder: Option<Mutex<CassetteRecorder>>,
    replayer: Option<CassetteReplayer>,
    max_attempts: u32,
    limiter: Limiter,
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder::default()
    }

    /// Issue one chat completion.
    ///
    /// In replay mode the response is byte-identical to the recorded entry
    /// for this request's canonical key; otherwise the registered backend is
    /// called with up to `max_attempts` tries. Every success is added to the
    /// ledger under the request tag, and recorded to the cassette when
    /// recording.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        if let Some(replayer) = &self.replayer {
            let entry = replayer.take(request)?;
            self.ledger.lock().expect("ledger lock").add(
                &request.tag,
                entry.usage.prompt_tokens,
                entry.usage.completion_tokens,
                entry.latency_ms,
            );
            return Ok(ChatResponse {
                text: entry.response_text,
                usage: entry.usage,
                backend_id: request.backend_id.clone(),
                latency: Duration::from_millis(entry.latency_ms),
            });
        }

        let backend = self
            .chat_backends
            .get(&request.backend_id)
            .ok_or_else(|| Error::UnknownBackend(request.backend_id.clone()))?
            .clone();

        // The ticket fixes this call's position in cassette issue order and
        // must be taken before dispatch.
        let ticket = self.ticket.fetch_add(1, Ordering::SeqCst);
        let _permit = self.limiter.acquire();

        let mut last_err = String::new();
        for _attempt in 1..=self.max_attempts {
            match backend.complete(request) {
                Ok(reply) => {
                    self.ledger.lock().expect("ledger lock").add(
                        &request.tag,
                        reply.usage.prompt_tokens,
                        reply.usage.completion_tokens,
                        reply.latency_ms,
                    );
                    if let Some(recorder) = &self.recorder {
                        recorder.lock().expect("recorder lock").record(
                            ticket,
                            Some(CassetteEntry {
                                ordinal: 0,
                                key: cassette_key(request),
                                request: request.into(),
                                response_text: reply.text.clone(),
                                usage: reply.usage,
                                latency_ms: reply.latency_ms,
                            }),
                        )?;
                    }
                    return Ok(ChatResponse {
                        text: reply.text,
                        usage: reply.usage,
                        backend_id: request.backend_id.clone(),
                        latency: Duration::from_millis(reply.latency_ms),
                    });
                }
                Err(message) => last_err = message,
            }
        }
        if let Some(recorder) = &self.recorder {
            recorder
                .lock()
                .expect("recorder lock")
                .record(ticket, None)?;
        }
        Err(Error::Transport {
            backend: request.backend_id.clone(),
            attempts: self.max_attempts,
            message: last_err,
        })
    }

    /// Embed a non-empty batch of texts: one unit-norm vector per input.
    pub fn embed(&self, texts: &[String], backend_id: &str) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Err(Error::Validation("embed called with no texts".into()));
        }
        let embedder = self
            .embedders
            .get(backend_id)
            .ok_or_else(|| Error::UnknownBackend(backend_id.to_owned()))?;
        let vectors = embedder.embed(texts)?;
        let expected = embedder.dimension();
        let mut out = Vec::with_capacity(vectors.len());
        for mut v in vectors {
            if v.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    got: v.len(),
                });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Validation("zero-norm embedding".into()));
            }
            if (norm - 1.0).abs() > 1e-12 {
                for x in &mut v {
                    *x /= norm;
                }
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn embedder(&self, backend_id: &str) -> Result<Arc<dyn Embedder>> {
        self.embedders
            .get(backend_id)
            .cloned()
            .ok_or_else(|| Error::UnknownBackend(backend_id.to_owned()))
    }

    /// Consistent point-in-time copy of the ledger.
    pub fn ledger_snapshot(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    /// Restore ledger state when resuming a run from its event log.
    pub fn restore_ledger(&self, ledger: UsageLedger) {
        *self.ledger.lock().expect("ledger lock") = ledger;
    }

    pub fn is_replay(&self) -> bool {
        self.replayer.is_some()
    }
}

#[derive(Default)]
pub struct GatewayBuilder {
    chat_backends: BTreeMap<String, Arc<dyn ChatBackend>>,
    embedders: BTreeMap<String, Arc<dyn Embedder>>,
    recorder: Option<CassetteRecorder>,
    replayer: Option<CassetteReplayer>,
    max_attempts: Option<u32>,
    parallelism: Option<usize>,
}

impl GatewayBuilder {
    pub fn chat(mut self, id: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        self.chat_backends.insert(id.into(), backend);
        self
    }

    pub fn embedder(mut self, id: impl Into<String>, embedder: Arc<dyn Embedder>) -> Self {
        self.embedders.insert(id.into(), embedder);
        self
    }

    pub fn record_to(mut self, recorder: CassetteRecorder) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn replay_from(mut self, replayer: CassetteReplayer) -> Self {
        self.replayer = Some(replayer);
        self
    }

    pub fn max_attempts(mut self, attempts: u32) -> Self {
        self.max_attempts = Some(attempts.max(1));
        self
    }

    pub fn parallelism(mut self, limit: usize) -> Self {
        self.parallelism = Some(limit);
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            chat_backends: self.chat_backends,
            embedders: self.embedders,
            ledger: Mutex::new(UsageLedger::default()),
            ticket: AtomicU64::new(0),
            recorder: self.recorder.map(Mutex::new),
            replayer: self.replayer,
            max_attempts: self.max_attempts.unwrap_or(DEFAULT_MAX_ATTEMPTS),
            limiter: Limiter::new(self.parallelism.unwrap_or(8)),
        }
    }
}
