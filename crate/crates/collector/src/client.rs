//! OpenAI-compatible completion endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CollectorError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiMode {
    /// `POST {base}/completions`
    #[default]
    Completions,
    /// `POST {base}/chat/completions` with a single user message.
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Ask for per-token logprobs of the echoed prompt (scoring mode).
    pub logprobs: bool,
    pub echo: bool,
    pub mode: ApiMode,
}

impl CompletionRequest {
    pub fn generate(model: &str, prompt: String, max_tokens: u32, mode: ApiMode) -> Self {
        Self { model: model.to_string(), prompt, max_tokens, temperature: 0.0, logprobs: false, echo: false, mode }
    }

    /// Scores `text` under the model without sampling anything new.
    pub fn score(model: &str, text: String) -> Self {
        Self {
            model: model.to_string(),
            prompt: text,
            max_tokens: 0,
            temperature: 0.0,
            logprobs: true,
            echo: true,
            mode: ApiMode::Completions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    /// Absent for the very first token on some servers.
    pub logprob: Option<f64>,
    /// Byte offset of the token in the echoed text.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<TokenLogprob>,
}

impl CompletionResponse {
    /// Logprobs of tokens that reach past byte `start`, i.e. the gold
    /// continuation plus any token straddling the boundary (a trailing space
    /// in the prompt usually merges into the first gold token).
    pub fn logprobs_from(&self, start: usize) -> Vec<f64> {
        self.tokens.iter().filter(|t| t.offset + t.token.len() > start).filter_map(|t| t.logprob).collect()
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 5, base_delay_ms: 500 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << attempt.min(16)))
    }
}

/// Retries transient failures with exponential backoff.
pub fn with_retry<T>(policy: &RetryPolicy, mut f: impl FnMut() -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match f() {
            Err(e) if e.is_transient() && attempt < policy.max_retries => {
                let wait = policy.delay(attempt);
                log::warn!("{e}; retry {} of {} in {wait:?}", attempt + 1, policy.max_retries);
                std::thread::sleep(wait);
                attempt += 1;
            }
            other => return other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub mode: ApiMode,
    /// Whether the server returns echoed prompt logprobs.
    #[serde(default = "default_true")]
    pub supports_logprobs: bool,
}

fn default_key_env() -> String {
    "BENTO_API_KEY".into()
}

fn default_timeout() -> u64 {
    60
}

fn default_true() -> bool {
    true
}

pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
    retry: RetryPolicy,
}

impl HttpBackend {
    /// Reads the key from the configured environment variable.
    pub fn from_config(cfg: &EndpointConfig) -> Result<Self> {
        let api_key = std::env::var(&cfg.api_key_env)
            .map_err(|_| CollectorError::Config(format!("environment variable {} is not set", cfg.api_key_env)))?;
        Ok(Self::new(&cfg.base_url, api_key, Duration::from_secs(cfg.timeout_secs), cfg.retry))
    }

    pub fn new(base_url: &str, api_key: String, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { agent, base_url: base_url.trim_end_matches('/').to_string(), api_key, retry }
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value> {
        let url = format!("{}{path}", self.base_url);
        let resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        match resp {
            Ok(mut r) => r.body_mut().read_json().map_err(|e| CollectorError::Permanent(format!("bad response body: {e}"))),
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                Err(CollectorError::Transient(format!("{url} returned {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => Err(CollectorError::Permanent(format!("{url} returned {code}"))),
            Err(e @ (ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound)) => {
                Err(CollectorError::Transient(format!("{url}: {e}")))
            }
            Err(e) => Err(CollectorError::Permanent(format!("{url}: {e}"))),
        }
    }

    fn once(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        match req.mode {
            ApiMode::Completions => {
                let mut body = json!({
                    "model": req.model,
                    "prompt": req.prompt,
                    "max_tokens": req.max_tokens,
                    "temperature": req.temperature,
                });
                if req.echo {
                    body["echo"] = json!(true);
                }
                if req.logprobs {
                    body["logprobs"] = json!(1);
                }
                parse_completion(&self.post("/completions", &body)?)
            }
            ApiMode::Chat => {
                let body = json!({
                    "model": req.model,
                    "messages": [{"role": "user", "content": req.prompt}],
                    "max_tokens": req.max_tokens,
                    "temperature": req.temperature,
                });
                parse_chat(&self.post("/chat/completions", &body)?)
            }
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        with_retry(&self.retry, || self.once(req))
    }
}

fn first_choice(v: &serde_json::Value) -> Result<&serde_json::Value> {
    v.get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| CollectorError::Permanent(format!("response has no choices: {v}")))
}

pub fn parse_completion(v: &serde_json::Value) -> Result<CompletionResponse> {
    #[derive(Deserialize)]
    struct Logprobs {
        tokens: Vec<String>,
        token_logprobs: Vec<Option<f64>>,
        text_offset: Vec<usize>,
    }
    let choice = first_choice(v)?;
    let text = choice.get("text").and_then(|t| t.as_str()).unwrap_or_default().to_string();
    let tokens = match choice.get("logprobs") {
        Some(lp) if !lp.is_null() => {
            let lp: Logprobs = serde_json::from_value(lp.clone())
                .map_err(|e| CollectorError::Permanent(format!("bad logprobs block: {e}")))?;
            if lp.tokens.len() != lp.token_logprobs.len() || lp.tokens.len() != lp.text_offset.len() {
                return Err(CollectorError::Permanent("logprob arrays differ in length".into()));
            }
            lp.tokens
                .into_iter()
                .zip(lp.token_logprobs)
                .zip(lp.text_offset)
                .map(|((token, logprob), offset)| TokenLogprob { token, logprob, offset })
                .collect()
        }
        _ => Vec::new(),
    };
    Ok(CompletionResponse { text, tokens })
}

pub fn parse_chat(v: &serde_json::Value) -> Result<CompletionResponse> {
    let text = first_choice(v)?
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .ok_or_else(|| CollectorError::Permanent(format!("chat response has no content: {v}")))?;
    Ok(CompletionResponse { text: text.to_string(), tokens: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn retry_gives_up_after_max() {
        let calls = Cell::new(0);
        let policy = RetryPolicy { max_retries: 5, base_delay_ms: 0 };
        let r: Result<()> = with_retry(&policy, || {
            calls.set(calls.get() + 1);
            Err(CollectorError::Transient("503".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 6);
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let calls = Cell::new(0);
        let r: Result<()> = with_retry(&RetryPolicy { max_retries: 5, base_delay_ms: 0 }, || {
            calls.set(calls.get() + 1);
            Err(CollectorError::Permanent("400".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy { max_retries: 5, base_delay_ms: 100 };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(3), Duration::from_millis(800));
    }

    #[test]
    fn parses_completion_logprobs() {
        let v = json!({"choices": [{"text": "ab c", "logprobs": {
            "tokens": ["ab", " c"], "token_logprobs": [null, -0.5], "text_offset": [0, 2]}}]});
        let r = parse_completion(&v).unwrap();
        assert_eq!(r.text, "ab c");
        assert_eq!(r.logprobs_from(2), vec![-0.5]);
        assert_eq!(r.logprobs_from(3), vec![-0.5]);
        assert_eq!(r.logprobs_from(4), Vec::<f64>::new());
        assert_eq!(r.logprobs_from(0), vec![-0.5]);
        assert!(parse_completion(&json!({"choices": []})).is_err());
    }

    #[test]
    fn parses_chat() {
        let v = json!({"choices": [{"message": {"role": "assistant", "content": "B"}}]});
        assert_eq!(parse_chat(&v).unwrap().text, "B");
    }
}
