//! Model backends: an OpenAI-compatible HTTP client and a deterministic
//! scripted backend for golden-transcript tests.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{debug, warn};

use crate::error::{Error, Result};

/// Environment variable holding the API key for the HTTP backend.
pub const API_KEY_ENV: &str = "NESTED_AGENT_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Flattens messages into the single string matchers and logs look at.
pub fn render_messages(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        out.push('[');
        out.push_str(role);
        out.push_str("]\n");
        out.push_str(&m.content);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        CompletionRequest {
            messages,
            temperature: 0.0,
            max_tokens: 512,
            n_samples: 1,
            stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidInput("n_samples must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::InvalidInput(format!("bad temperature {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidInput("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: usize,
    pub output: usize,
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input: self.input + rhs.input,
            output: self.output + rhs.output,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub samples: Vec<String>,
    pub usage: TokenUsage,
    pub latency: Duration,
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse>;

    /// Responses come back in request order with one result per slot.
    fn complete_batch(&self, requests: &[CompletionRequest]) -> Vec<Result<CompletionResponse>> {
        requests.iter().map(|r| self.complete(r)).collect()
    }

    /// Cheap reachability probe run before a harness launches workers.
    fn health_check(&self) -> Result<()> {
        Ok(())
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        (**self).complete(request)
    }

    fn complete_batch(&self, requests: &[CompletionRequest]) -> Vec<Result<CompletionResponse>> {
        (**self).complete_batch(requests)
    }

    fn health_check(&self) -> Result<()> {
        (**self).health_check()
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        (**self).complete(request)
    }

    fn complete_batch(&self, requests: &[CompletionRequest]) -> Vec<Result<CompletionResponse>> {
        (**self).complete_batch(requests)
    }

    fn health_check(&self) -> Result<()> {
        (**self).health_check()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    /// `*` in fixtures.
    Any,
    Contains(String),
}

impl Matcher {
    pub fn parse(s: &str) -> Matcher {
        if s == "*" {
            Matcher::Any
        } else {
            Matcher::Contains(s.to_string())
        }
    }

    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => prompt.contains(s.as_str()),
        }
    }

    fn describe(&self) -> String {
        match self {
            Matcher::Any => "*".into(),
            Matcher::Contains(s) => format!("{s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub matcher: Matcher,
    pub response: String,
}

impl ScriptEntry {
    pub fn new(matcher: &str, response: impl Into<String>) -> Self {
        ScriptEntry {
            matcher: Matcher::parse(matcher),
            response: response.into(),
        }
    }
}

/// File form of a script entry: a bare string is a wildcard response.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ScriptEntrySpec {
    Bare(String),
    Full {
        #[serde(rename = "match", default = "wildcard")]
        matcher: String,
        response: String,
    },
}

fn wildcard() -> String {
    "*".into()
}

impl From<ScriptEntrySpec> for ScriptEntry {
    fn from(spec: ScriptEntrySpec) -> Self {
        match spec {
            ScriptEntrySpec::Bare(response) => ScriptEntry::new("*", response),
            ScriptEntrySpec::Full { matcher, response } => ScriptEntry::new(&matcher, response),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMode {
    /// Entries are consumed in order; the next one must match; running out is an error.
    #[default]
    Sequential,
    /// Like `Sequential` but wraps around.
    Cyclic,
    /// Stateless: the first entry whose matcher fits the prompt answers.
    Responder,
}

/// A deterministic stand-in model replaying fixture responses.
#[derive(Debug)]
pub struct ScriptedBackend {
    script: Vec<ScriptEntry>,
    mode: ScriptMode,
    cursor: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(script: Vec<ScriptEntry>, mode: ScriptMode) -> Self {
        ScriptedBackend {
            script,
            mode,
            cursor: Mutex::new(0),
        }
    }

    pub fn sequential<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            responses.into_iter().map(|r| ScriptEntry::new("*", r)).collect(),
            ScriptMode::Sequential,
        )
    }

    pub fn cyclic<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            responses.into_iter().map(|r| ScriptEntry::new("*", r)).collect(),
            ScriptMode::Cyclic,
        )
    }

    /// Entries consumed so far.
    pub fn position(&self) -> usize {
        *self.cursor.lock().unwrap()
    }

    /// A fresh backend with the same script and a rewound cursor.
    pub fn rewound(&self) -> ScriptedBackend {
        ScriptedBackend::new(self.script.clone(), self.mode)
    }

    fn next_sample(&self, prompt: &str) -> Result<String> {
        if self.script.is_empty() {
            return Err(Error::Fixture("empty script".into()));
        }
        if self.mode == ScriptMode::Responder {
            return self
                .script
                .iter()
                .find(|e| e.matcher.matches(prompt))
                .map(|e| e.response.clone())
                .ok_or_else(|| Error::Fixture(format!("no script entry matches prompt:\n{prompt}")));
        }
        let mut cursor = self.cursor.lock().unwrap();
        let idx = match self.mode {
            ScriptMode::Cyclic => *cursor % self.script.len(),
            _ => *cursor,
        };
        let entry = self.script.get(idx).ok_or_else(|| {
            Error::Fixture(format!("script exhausted after {} responses", self.script.len()))
        })?;
        if !entry.matcher.matches(prompt) {
            return Err(Error::Fixture(format!(
                "script entry {idx} expected a prompt matching {} but got:\n{prompt}",
                entry.matcher.describe()
            )));
        }
        *cursor += 1;
        Ok(entry.response.clone())
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        request.validate()?;
        let started = Instant::now();
        let prompt = render_messages(&request.messages);
        let samples = (0..request.n_samples)
            .map(|_| self.next_sample(&prompt))
            .collect::<Result<Vec<_>>>()?;
        let input = prompt.split_whitespace().count();
        let output = samples.iter().map(|s| s.split_whitespace().count()).sum();
        Ok(CompletionResponse {
            samples,
            usage: TokenUsage { input, output },
            latency: started.elapsed(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Falls back to `NESTED_AGENT_API_KEY` when unset.
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

/// Client for an OpenAI-compatible `/v1/chat/completions` endpoint.
pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::backend(format!("building client: {e}"), None, false))?;
        let api_key = config.api_key.clone().or_else(|| std::env::var(API_KEY_ENV).ok());
        Ok(HttpBackend {
            config,
            api_key,
            client,
        })
    }

    fn api_root(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            base.to_string()
        } else {
            format!("{base}/v1")
        }
    }

    pub fn request_body(&self, request: &CompletionRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "n": request.n_samples,
        });
        if let Some(stop) = &request.stop {
            body["stop"] = json!(stop);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<serde_json::Value> {
        let mut req = self.client.post(format!("{}/chat/completions", self.api_root())).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| Error::backend(format!("transport: {e}"), None, true))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err(Error::backend(text, Some(status.as_u16()), retryable));
        }
        resp.json::<serde_json::Value>()
            .map_err(|e| Error::backend(format!("decoding response: {e}"), Some(status.as_u16()), false))
    }
}

pub fn parse_chat_response(value: &serde_json::Value, n_samples: usize) -> Result<(Vec<String>, TokenUsage)> {
    let choices = value
        .get("choices")
        .and_then(|c| c.as_array())
        .ok_or_else(|| Error::backend("response has no choices array", None, false))?;
    let samples = choices
        .iter()
        .map(|c| {
            c.pointer("/message/content")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| Error::backend("choice without message.content", None, false))
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.len() != n_samples {
        return Err(Error::backend(
            format!("asked for {n_samples} samples, got {}", samples.len()),
            None,
            false,
        ));
    }
    let usage = TokenUsage {
        input: value.pointer("/usage/prompt_tokens").and_then(|v| v.as_u64()).unwrap_or(0) as usize,
        output: value.pointer("/usage/completion_tokens").and_then(|v| v.as_u64()).unwrap_or(0) as usize,
    };
    Ok((samples, usage))
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse> {
        request.validate()?;
        let body = self.request_body(request);
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(value) => {
                    let (samples, usage) = parse_chat_response(&value, request.n_samples)?;
                    return Ok(CompletionResponse {
                        samples,
                        usage,
                        latency: started.elapsed(),
                    });
                }
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    let wait = Duration::from_millis(self.config.backoff_ms << attempt);
                    warn!(attempt, ?wait, error = %e, "retrying completion");
                    thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn complete_batch(&self, requests: &[CompletionRequest]) -> Vec<Result<CompletionResponse>> {
        thread::scope(|scope| {
            let handles: Vec<_> = requests
                .iter()
                .map(|r| scope.spawn(move || self.complete(r)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::backend("request thread panicked", None, false)))
                })
                .collect()
        })
    }

    fn health_check(&self) -> Result<()> {
        let mut req = self.client.get(format!("{}/models", self.api_root()));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| Error::backend(format!("unreachable: {e}"), None, true))?;
        debug!(status = resp.status().as_u16(), "health check");
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest::new(vec![ChatMessage::user(text)])
    }

    #[test]
    fn wildcard_script() {
        let b = ScriptedBackend::sequential(["Answer: 4"]);
        let r = b.complete(&req("what is 2+2")).unwrap();
        assert_eq!(r.samples, ["Answer: 4"]);
        assert!(matches!(b.complete(&req("again")), Err(Error::Fixture(_))));
    }

    #[test]
    fn cyclic_samples_alternate() {
        let b = ScriptedBackend::cyclic(["a", "b"]);
        let mut r = req("q");
        r.n_samples = 5;
        assert_eq!(b.complete(&r).unwrap().samples, ["a", "b", "a", "b", "a"]);
    }

    #[test]
    fn mismatch_names_expected_matcher() {
        let b = ScriptedBackend::new(vec![ScriptEntry::new("Choose", "act")], ScriptMode::Sequential);
        let err = b.complete(&req("something else")).unwrap_err().to_string();
        assert!(err.contains("\"Choose\""), "{err}");
        assert_eq!(b.position(), 0);
    }

    #[test]
    fn responder_picks_first_match() {
        let b = ScriptedBackend::new(
            vec![ScriptEntry::new("Rate", "7"), ScriptEntry::new("*", "Answer: 1")],
            ScriptMode::Responder,
        );
        assert_eq!(b.complete(&req("Rate this")).unwrap().samples, ["7"]);
        assert_eq!(b.complete(&req("solve")).unwrap().samples, ["Answer: 1"]);
        assert_eq!(b.complete(&req("Rate again")).unwrap().samples, ["7"]);
    }

    #[test]
    fn batch_pairs_by_submission_order() {
        let b = ScriptedBackend::sequential((0..8).map(|i| format!("r{i}")));
        let reqs: Vec<_> = (0..8).map(|i| req(&format!("q{i}"))).collect();
        let out = b.complete_batch(&reqs);
        for (i, r) in out.into_iter().enumerate() {
            assert_eq!(r.unwrap().samples, [format!("r{i}")]);
        }
    }

    #[test]
    fn batch_usage_is_additive() {
        let single = ScriptedBackend::cyclic(["one two", "three"]);
        let batch = single.rewound();
        let reqs = vec![req("a b c"), req("d e")];
        let mapped: TokenUsage = reqs
            .iter()
            .map(|r| single.complete(r).unwrap().usage)
            .fold(TokenUsage::default(), |a, b| a + b);
        let batched = batch
            .complete_batch(&reqs)
            .into_iter()
            .map(|r| r.unwrap().usage)
            .fold(TokenUsage::default(), |a, b| a + b);
        assert_eq!(mapped, batched);
    }

    #[test]
    fn invalid_requests_rejected() {
        let b = ScriptedBackend::cyclic(["x"]);
        let mut r = req("q");
        r.n_samples = 0;
        assert!(matches!(b.complete(&r), Err(Error::InvalidInput(_))));
        r.n_samples = 1;
        r.temperature = f64::NAN;
        assert!(b.complete(&r).is_err());
    }

    #[test]
    fn parses_openai_choices() {
        let v = json!({
            "choices": [{"message": {"role": "assistant", "content": "hi"}},
                        {"message": {"role": "assistant", "content": "yo"}}],
            "usage": {"prompt_tokens": 7, "completion_tokens": 2}
        });
        let (samples, usage) = parse_chat_response(&v, 2).unwrap();
        assert_eq!(samples, ["hi", "yo"]);
        assert_eq!(usage, TokenUsage { input: 7, output: 2 });
        assert!(parse_chat_response(&v, 3).is_err());
    }

    #[test]
    fn script_spec_forms() {
        let specs: Vec<ScriptEntrySpec> =
            serde_json::from_str(r#"["plain", {"match": "Rate", "response": "5"}, {"response": "x"}]"#).unwrap();
        let entries: Vec<ScriptEntry> = specs.into_iter().map(Into::into).collect();
        assert_eq!(entries[0], ScriptEntry::new("*", "plain"));
        assert_eq!(entries[1], ScriptEntry::new("Rate", "5"));
        assert_eq!(entries[2].matcher, Matcher::Any);
    }
}
