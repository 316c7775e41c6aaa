//! Chat-completion backends.
//!
//! [`OpenAiClient`] talks to any OpenAI-compatible `/v1/chat/completions`
//! endpoint. [`MockLlm`] is a deterministic stand-in that reads the example
//! lines back out of the prompt and imitates the closest good example; the
//! tests and the acceptance suite run against it. [`RecordingModel`] and
//! [`ReplayModel`] persist and serve transcripts as newline-delimited JSON.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{self, ParsedAction, PromptBundle, MAX_LEVEL, MIN_LEVEL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("could not decode completion: {0}")]
    Decode(String),
    #[error("mock model rejected prompt: {0}")]
    Mock(String),
    #[error("no recorded reply for prompt")]
    NoRecording,
    #[error("no parseable level after {attempts} attempts, last reply {last_reply:?}")]
    RetriesExhausted { attempts: u32, last_reply: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_s: f64,
    pub max_retries: u32,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000".to_string(),
            model: "mock".to_string(),
            temperature: 0.0,
            max_tokens: 64,
            timeout_s: 30.0,
            max_retries: 2,
            api_key_env: "OPENAI_API_KEY".to_string(),
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.temperature >= 0.0) {
            problems.push(format!("temperature must be non-negative, got {}", self.temperature));
        }
        if !(self.timeout_s > 0.0) {
            problems.push(format!("timeout_s must be positive, got {}", self.timeout_s));
        }
        problems
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub reply: String,
    pub latency_ms: f64,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    /// 0 for the first request of a decision, incremented on each retry.
    pub attempt: u32,
}

pub trait ChatModel: Send + Sync {
    /// One completion. `nonce` is a per-call value from the caller's seeded
    /// generator; deterministic backends derive their randomness from it.
    fn complete(&self, prompt: &str, nonce: u64) -> Result<CompletionResult, LlmError>;

    fn name(&self) -> &str;
}

impl<M: ChatModel + ?Sized> ChatModel for Box<M> {
    fn complete(&self, prompt: &str, nonce: u64) -> Result<CompletionResult, LlmError> {
        (**self).complete(prompt, nonce)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Sends the bundle once, as it should look on the given attempt.
pub fn chat_complete<M: ChatModel + ?Sized>(
    model: &M,
    bundle: &PromptBundle,
    attempt: u32,
    nonce: u64,
) -> Result<CompletionResult, LlmError> {
    let prompt = prompting::prompt_for_attempt(bundle, attempt);
    let mut result = model.complete(&prompt, nonce)?;
    result.attempt = attempt;
    Ok(result)
}

/// Queries until the reply parses to a level, up to `max_retries` extra
/// attempts. Transport failures are returned immediately.
pub fn query_action<M: ChatModel + ?Sized>(
    model: &M,
    bundle: &PromptBundle,
    cfg: &LlmConfig,
    nonce: u64,
) -> Result<(ParsedAction, CompletionResult), LlmError> {
    let mut last_reply = String::new();
    for attempt in 0..=cfg.max_retries {
        let result = chat_complete(model, bundle, attempt, nonce.wrapping_add(attempt as u64))?;
        match prompting::parse_action(&result.reply) {
            Ok(action) => return Ok((action, result)),
            Err(_) => last_reply = result.reply,
        }
    }
    Err(LlmError::RetriesExhausted { attempts: cfg.max_retries + 1, last_reply })
}

/// Blocking client for OpenAI-compatible chat-completion endpoints.
#[derive(Debug, Clone)]
pub struct OpenAiClient {
    http: reqwest::blocking::Client,
    cfg: LlmConfig,
    api_key: Option<String>,
    timeout: Duration,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl OpenAiClient {
    /// Reads the API key from the configured environment variable, if set.
    pub fn new(cfg: LlmConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_api_key(cfg, api_key)
    }

    pub fn with_api_key(cfg: LlmConfig, api_key: Option<String>) -> Result<Self, LlmError> {
        let timeout = Duration::from_secs_f64(cfg.timeout_s);
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self { http, cfg, api_key, timeout })
    }

    pub fn endpoint(&self) -> String {
        let base = self.cfg.base_url.trim_end_matches('/');
        let base = base.strip_suffix("/v1").unwrap_or(base);
        format!("{base}/v1/chat/completions")
    }
}

impl ChatModel for OpenAiClient {
    fn complete(&self, prompt: &str, _nonce: u64) -> Result<CompletionResult, LlmError> {
        let body = ChatRequest {
            model: &self.cfg.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
        };
        let started = Instant::now();
        let mut request = self.http.post(self.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let map_err = |e: reqwest::Error| {
            if e.is_timeout() {
                LlmError::Timeout(self.timeout)
            } else {
                LlmError::Transport(e.to_string())
            }
        };
        let response = request.send().map_err(map_err)?;
        let status = response.status();
        let text = response.text().map_err(map_err)?;
        if !status.is_success() {
            return Err(LlmError::Status { status: status.as_u16(), body: text });
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| LlmError::Decode(e.to_string()))?;
        let reply = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Decode("response has no choices[0].message.content".to_string()))?;
        let usage = parsed.usage;
        Ok(CompletionResult {
            reply,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
            prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
            attempt: 0,
        })
    }

    fn name(&self) -> &str {
        &self.cfg.model
    }
}

/// Deterministic imitation policy over the prompt's examples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MockLlm {
    pub seed: u64,
}

impl MockLlm {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl ChatModel for MockLlm {
    fn complete(&self, prompt: &str, nonce: u64) -> Result<CompletionResult, LlmError> {
        let reply = mock_decide(prompt, mix(self.seed, nonce))?;
        Ok(CompletionResult { reply, latency_ms: 0.0, prompt_tokens: None, completion_tokens: None, attempt: 0 })
    }

    fn name(&self) -> &str {
        "mock"
    }
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Picks the good example closest to the query state (ties: higher reward,
/// then lower level). Without good examples, picks a seeded random level
/// that no same-state bad example used. Replies `level <n>`.
pub fn mock_decide(prompt: &str, seed: u64) -> Result<String, LlmError> {
    let view = prompting::parse_prompt(prompt).map_err(|e| LlmError::Mock(e.to_string()))?;
    let best = view.good.iter().min_by(|a, b| {
        let da = (a.state - view.target).abs();
        let db = (b.state - view.target).abs();
        da.total_cmp(&db).then(b.reward.total_cmp(&a.reward)).then(a.action.cmp(&b.action))
    });
    let level = match best {
        Some(ex) => ex.action,
        None => {
            let excluded: Vec<u8> = view
                .bad
                .iter()
                .filter(|ex| ex.state_text == view.target_text)
                .map(|ex| ex.action)
                .collect();
            let mut allowed: Vec<u8> = (MIN_LEVEL..=MAX_LEVEL).filter(|l| !excluded.contains(l)).collect();
            if allowed.is_empty() {
                allowed = (MIN_LEVEL..=MAX_LEVEL).collect();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            allowed[rng.gen_range(0..allowed.len())]
        }
    };
    Ok(format!("level {level}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub model: String,
    pub prompt: String,
    pub reply: Option<String>,
    pub error: Option<String>,
    pub latency_ms: f64,
}

/// Wraps a model and appends every exchange to an NDJSON sink.
pub struct RecordingModel<M> {
    inner: M,
    sink: Mutex<Box<dyn Write + Send>>,
}

impl<M: ChatModel> RecordingModel<M> {
    pub fn new(inner: M, sink: Box<dyn Write + Send>) -> Self {
        Self { inner, sink: Mutex::new(sink) }
    }
}

impl<M: ChatModel> ChatModel for RecordingModel<M> {
    fn complete(&self, prompt: &str, nonce: u64) -> Result<CompletionResult, LlmError> {
        let result = self.inner.complete(prompt, nonce);
        let record = Transcript {
            model: self.inner.name().to_string(),
            prompt: prompt.to_string(),
            reply: result.as_ref().ok().map(|r| r.reply.clone()),
            error: result.as_ref().err().map(|e| e.to_string()),
            latency_ms: result.as_ref().map(|r| r.latency_ms).unwrap_or(0.0),
        };
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        // A failing transcript sink must not abort the control loop.
        if serde_json::to_writer(&mut *sink, &record).is_ok() {
            let _ = sink.write_all(b"\n");
            let _ = sink.flush();
        }
        result
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

/// Serves recorded replies in order, keyed by exact prompt text.
pub struct ReplayModel {
    name: String,
    replies: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ReplayModel {
    pub fn from_transcripts<I: IntoIterator<Item = Transcript>>(name: impl Into<String>, transcripts: I) -> Self {
        let mut replies: HashMap<String, VecDeque<String>> = HashMap::new();
        for t in transcripts {
            if let Some(reply) = t.reply {
                replies.entry(t.prompt).or_default().push_back(reply);
            }
        }
        Self { name: name.into(), replies: Mutex::new(replies) }
    }

    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Self, LlmError> {
        let mut transcripts = Vec::new();
        let mut name = String::from("replay");
        for line in input.lines() {
            let line = line.map_err(|e| LlmError::Decode(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Transcript = serde_json::from_str(&line).map_err(|e| LlmError::Decode(e.to_string()))?;
            name = t.model.clone();
            transcripts.push(t);
        }
        Ok(Self::from_transcripts(name, transcripts))
    }
}

impl ChatModel for ReplayModel {
    fn complete(&self, prompt: &str, _nonce: u64) -> Result<CompletionResult, LlmError> {
        let mut replies = self.replies.lock().unwrap_or_else(|e| e.into_inner());
        let reply = replies.get_mut(prompt).and_then(VecDeque::pop_front).ok_or(LlmError::NoRecording)?;
        Ok(CompletionResult { reply, latency_ms: 0.0, prompt_tokens: None, completion_tokens: None, attempt: 0 })
    }

    fn name(&self) -> &str {
        &self.name
    }
}
