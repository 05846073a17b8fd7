//! Text-completion gateway: backends, fixtures and the per-question call budget.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::text::content_hash;

pub const DEFAULT_MAX_TOKENS: u32 = 300;
pub const DEFAULT_TOP_P: f64 = 1.0;
pub const DEFAULT_CALL_CAP: u32 = 20;
pub const LIVE_RETRIES: u32 = 2;
pub const API_KEY_ENV: &str = "TOC_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("call budget exhausted ({spent}/{cap})")]
    BudgetExceeded { spent: u32, cap: u32 },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no fixture for prompt {hash}")]
    FixtureMiss { hash: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("fixture store: {0}")]
    Persistence(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            top_p: DEFAULT_TOP_P,
            temperature: None,
            stop: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidRequest(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: Usage,
}

/// Per-question ledger of completed model invocations.
///
/// Reservation is an atomic compare-and-swap, so concurrent callers can never push
/// `spent` past `cap`.
#[derive(Debug)]
pub struct CallBudget {
    cap: u32,
    spent: AtomicU32,
}

impl CallBudget {
    pub fn new(cap: u32) -> Self {
        Self {
            cap,
            spent: AtomicU32::new(0),
        }
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn spent(&self) -> u32 {
        self.spent.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> u32 {
        self.cap - self.spent()
    }

    /// Reserves one call, leaving at least `headroom` calls unreserved.
    pub fn try_acquire(&self, headroom: u32) -> Result<(), LlmError> {
        let limit = self.cap.saturating_sub(headroom);
        self.spent
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |s| (s < limit).then_some(s + 1))
            .map(|_| ())
            .map_err(|spent| LlmError::BudgetExceeded { spent, cap: self.cap })
    }

    fn release(&self) {
        self.spent.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Anything that turns a prompt into text.
pub trait CompletionBackend: Send + Sync {
    fn invoke(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

fn word_count(s: &str) -> u32 {
    s.split_whitespace().count() as u32
}

fn offline_usage(request: &CompletionRequest, text: &str) -> Usage {
    Usage {
        prompt_tokens: word_count(&request.prompt),
        completion_tokens: word_count(text).min(request.max_tokens),
    }
}

/// Runs one completion against `backend`, charging `budget` only if the model answered.
pub fn complete(
    backend: &dyn CompletionBackend,
    request: &CompletionRequest,
    budget: &CallBudget,
) -> Result<CompletionResponse, LlmError> {
    complete_with_headroom(backend, request, budget, 0)
}

pub fn complete_with_headroom(
    backend: &dyn CompletionBackend,
    request: &CompletionRequest,
    budget: &CallBudget,
    headroom: u32,
) -> Result<CompletionResponse, LlmError> {
    request.validate()?;
    budget.try_acquire(headroom)?;
    match backend.invoke(request) {
        Ok(resp) if resp.usage.completion_tokens > request.max_tokens => {
            budget.release();
            Err(LlmError::InvalidResponse(format!(
                "{} completion tokens exceed max_tokens {}",
                resp.usage.completion_tokens, request.max_tokens
            )))
        }
        Ok(resp) => Ok(resp),
        Err(e) => {
            budget.release();
            Err(e)
        }
    }
}

/// Matching rule for the scripted backend. All present conditions must hold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ends_with: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    pub response: String,
}

impl ScriptRule {
    pub fn ends_with(suffix: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            ends_with: Some(suffix.into()),
            response: response.into(),
            ..Self::default()
        }
    }

    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            contains: vec![needle.into()],
            response: response.into(),
            ..Self::default()
        }
    }

    fn matches(&self, prompt: &str, hash: &str) -> bool {
        self.prompt_hash.as_deref().map_or(true, |h| h == hash)
            && self
                .ends_with
                .as_deref()
                .map_or(true, |s| prompt.trim_end().ends_with(s.trim_end()))
            && self.contains.iter().all(|c| prompt.contains(c.as_str()))
    }
}

/// Deterministic backend answering from an ordered rule list; first match wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedBackend {
    pub rules: Vec<ScriptRule>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }

    pub fn push(&mut self, rule: ScriptRule) -> &mut Self {
        self.rules.push(rule);
        self
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let bytes = fs::read(path).map_err(|e| LlmError::Persistence(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| LlmError::Persistence(format!("{}: {e}", path.display())))
    }
}

impl CompletionBackend for ScriptedBackend {
    fn invoke(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let hash = content_hash(&request.prompt);
        let rule = self
            .rules
            .iter()
            .find(|r| r.matches(&request.prompt, &hash))
            .ok_or(LlmError::FixtureMiss { hash })?;
        Ok(CompletionResponse {
            usage: offline_usage(request, &rule.response),
            text: rule.response.clone(),
        })
    }
}

/// One persisted exchange in a fixture directory, stored as `<prompt_hash>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub prompt_hash: String,
    pub prompt: String,
    pub response: CompletionResponse,
}

/// Directory of recorded completions keyed by prompt hash.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn get(&self, prompt: &str) -> Result<Option<FixtureEntry>, LlmError> {
        let path = self.path_for(&content_hash(prompt));
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path).map_err(|e| LlmError::Persistence(format!("{}: {e}", path.display())))?;
        let entry = serde_json::from_slice(&bytes)
            .map_err(|e| LlmError::Persistence(format!("{}: {e}", path.display())))?;
        Ok(Some(entry))
    }

    pub fn put(&self, prompt: &str, response: &CompletionResponse) -> Result<(), LlmError> {
        fs::create_dir_all(&self.dir).map_err(|e| LlmError::Persistence(format!("{}: {e}", self.dir.display())))?;
        let entry = FixtureEntry {
            prompt_hash: content_hash(prompt),
            prompt: prompt.to_string(),
            response: response.clone(),
        };
        let path = self.path_for(&entry.prompt_hash);
        let bytes = serde_json::to_vec_pretty(&entry).map_err(|e| LlmError::Persistence(e.to_string()))?;
        fs::write(&path, bytes).map_err(|e| LlmError::Persistence(format!("{}: {e}", path.display())))
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Answers only from a fixture store.
pub struct ReplayBackend {
    store: FixtureStore,
}

impl ReplayBackend {
    pub fn new(store: FixtureStore) -> Self {
        Self { store }
    }
}

impl CompletionBackend for ReplayBackend {
    fn invoke(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        self.store
            .get(&request.prompt)?
            .map(|e| e.response)
            .ok_or_else(|| LlmError::FixtureMiss {
                hash: content_hash(&request.prompt),
            })
    }
}

/// Wraps a live backend and persists every successful exchange.
pub struct RecordingBackend<B> {
    inner: B,
    store: FixtureStore,
}

/// Wraps `backend` so that every completion is written to `store`.
pub fn record_mode<B: CompletionBackend>(backend: B, store: FixtureStore) -> RecordingBackend<B> {
    RecordingBackend { inner: backend, store }
}

impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    fn invoke(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let resp = self.inner.invoke(request)?;
        self.store.put(&request.prompt, &resp)?;
        Ok(resp)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: &'a str,
    max_tokens: u32,
    top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct WireChoice {
    text: String,
}

#[derive(Deserialize)]
struct WireReply {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Usage,
}

/// HTTP completion client. Accepts either `{"text", "usage"}` or the
/// `{"choices":[{"text"}], "usage"}` reply shape.
pub struct HttpBackend {
    endpoint: String,
    model: Option<String>,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    backoff: Duration,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            model: None,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            client,
            backoff: Duration::from_millis(500),
        })
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<CompletionResponse, AttemptError> {
        let body = WireRequest {
            model: self.model.as_deref(),
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            top_p: request.top_p,
            temperature: request.temperature,
            stop: &request.stop,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| AttemptError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(AttemptError::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(LlmError::BackendUnavailable(format!("status {status}"))));
        }
        let reply: WireReply = resp
            .json()
            .map_err(|e| AttemptError::Fatal(LlmError::InvalidResponse(e.to_string())))?;
        let text = reply
            .text
            .or_else(|| reply.choices.into_iter().next().map(|c| c.text))
            .ok_or_else(|| AttemptError::Fatal(LlmError::InvalidResponse("reply has no text".into())))?;
        Ok(CompletionResponse { text, usage: reply.usage })
    }
}

enum AttemptError {
    Transient(String),
    Fatal(LlmError),
}

impl CompletionBackend for HttpBackend {
    fn invoke(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 0..=LIVE_RETRIES {
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(msg)) => {
                    warn!(attempt, error = %msg, "completion attempt failed");
                    last = msg;
                    if attempt < LIVE_RETRIES {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(LlmError::BackendUnavailable(last))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Clarify,
    Verify,
    Answer,
}

/// A prompt and its raw completion as seen during a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub kind: CallKind,
    pub prompt_hash: String,
    pub prompt: String,
    pub completion: String,
}

/// Generation knobs applied to every request of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            top_p: DEFAULT_TOP_P,
            temperature: None,
        }
    }
}

/// Backend + budget + transcript for one question.
pub struct LlmSession<'a> {
    backend: &'a dyn CompletionBackend,
    budget: CallBudget,
    params: GenerationParams,
    transcript: Mutex<Vec<Exchange>>,
}

impl<'a> LlmSession<'a> {
    pub fn new(backend: &'a dyn CompletionBackend, cap: u32, params: GenerationParams) -> Self {
        Self {
            backend,
            budget: CallBudget::new(cap),
            params,
            transcript: Mutex::new(Vec::new()),
        }
    }

    pub fn budget(&self) -> &CallBudget {
        &self.budget
    }

    /// Completes `prompt`, keeping `headroom` calls in reserve, and logs the exchange.
    pub fn complete(&self, kind: CallKind, prompt: String, headroom: u32) -> Result<String, LlmError> {
        let request = CompletionRequest {
            prompt,
            max_tokens: self.params.max_tokens,
            top_p: self.params.top_p,
            temperature: self.params.temperature,
            stop: Vec::new(),
        };
        let resp = complete_with_headroom(self.backend, &request, &self.budget, headroom)?;
        self.transcript.lock().expect("transcript lock").push(Exchange {
            kind,
            prompt_hash: content_hash(&request.prompt),
            prompt: request.prompt,
            completion: resp.text.clone(),
        });
        Ok(resp.text)
    }

    pub fn transcript(&self) -> Vec<Exchange> {
        self.transcript.lock().expect("transcript lock").clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scripted() -> ScriptedBackend {
        ScriptedBackend::new(vec![
            ScriptRule::ends_with("Question: hello?", "DQ 1: a\nDA 1: b"),
            ScriptRule::contains("verify", "True"),
        ])
    }

    #[test]
    fn scripted_replay_charges_one_call() {
        let backend = scripted();
        let budget = CallBudget::new(20);
        let resp = complete(&backend, &CompletionRequest::new("x\nQuestion: hello?\n"), &budget).unwrap();
        assert_eq!(resp.text, "DQ 1: a\nDA 1: b");
        assert_eq!(budget.spent(), 1);
        assert!(resp.usage.completion_tokens <= DEFAULT_MAX_TOKENS);
    }

    #[test]
    fn unknown_prompt_is_fixture_miss_and_free() {
        let budget = CallBudget::new(20);
        let err = complete(&scripted(), &CompletionRequest::new("nothing"), &budget).unwrap_err();
        match err {
            LlmError::FixtureMiss { hash } => assert_eq!(hash, content_hash("nothing")),
            other => panic!("{other:?}"),
        }
        assert_eq!(budget.spent(), 0);
    }

    #[test]
    fn budget_cap_is_exact() {
        let backend = scripted();
        let budget = CallBudget::new(20);
        let req = CompletionRequest::new("please verify");
        for _ in 0..20 {
            complete(&backend, &req, &budget).unwrap();
        }
        assert_eq!(budget.spent(), 20);
        assert!(matches!(
            complete(&backend, &req, &budget),
            Err(LlmError::BudgetExceeded { spent: 20, cap: 20 })
        ));
        assert_eq!(budget.spent(), 20);
    }

    #[test]
    fn headroom_keeps_calls_in_reserve() {
        let budget = CallBudget::new(3);
        budget.try_acquire(1).unwrap();
        budget.try_acquire(1).unwrap();
        assert!(budget.try_acquire(1).is_err());
        budget.try_acquire(0).unwrap();
        assert_eq!(budget.remaining(), 0);
    }

    #[test]
    fn concurrent_callers_never_overshoot() {
        let budget = CallBudget::new(50);
        let ok = AtomicU32::new(0);
        thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..20 {
                        if budget.try_acquire(0).is_ok() {
                            ok.fetch_add(1, Ordering::SeqCst);
                        }
                    }
                });
            }
        });
        assert_eq!(ok.load(Ordering::SeqCst), 50);
        assert_eq!(budget.spent(), 50);
    }

    #[test]
    fn request_defaults_and_validation() {
        let r = CompletionRequest::new("p");
        assert_eq!(r.max_tokens, 300);
        assert_eq!(r.top_p, 1.0);
        let mut bad = r.clone();
        bad.top_p = 0.0;
        assert!(bad.validate().is_err());
        assert!(CompletionRequest::new("  ").validate().is_err());
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::new(dir.path());
        let recorder = record_mode(scripted(), store.clone());
        let budget = CallBudget::new(20);
        for p in ["a verify", "b verify", "c verify"] {
            complete(&recorder, &CompletionRequest::new(p), &budget).unwrap();
        }
        assert_eq!(store.len(), 3);

        let replay = ReplayBackend::new(store);
        let again = complete(&replay, &CompletionRequest::new("a verify"), &budget).unwrap();
        assert_eq!(again.text, "True");
        assert!(matches!(
            complete(&replay, &CompletionRequest::new("a verify!"), &budget),
            Err(LlmError::FixtureMiss { .. })
        ));
    }

    #[test]
    fn unwritable_store_is_persistence_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let recorder = record_mode(scripted(), FixtureStore::new(blocker.join("sub")));
        let err = recorder.invoke(&CompletionRequest::new("verify")).unwrap_err();
        assert!(matches!(err, LlmError::Persistence(_)));
    }
}
