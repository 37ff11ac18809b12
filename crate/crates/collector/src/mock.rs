//! A local OpenAI-compatible stand-in with deterministic answers.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

use bento_core::seed::digest_hex;

use crate::data::OPTION_LETTERS;
use crate::error::{CollectorError, Result};

#[derive(Debug, Clone)]
pub struct MockCall {
    pub path: String,
    pub body: Value,
}

#[derive(Debug, Clone)]
pub struct MockReply {
    pub status: u16,
    pub body: Value,
}

pub type Responder = Arc<dyn Fn(&MockCall) -> MockReply + Send + Sync>;

fn hash_byte(text: &str) -> u8 {
    u8::from_str_radix(&digest_hex(text.as_bytes())[..2], 16).expect("hex digest")
}

/// Splits on whitespace, keeping leading whitespace with each token.
fn pseudo_tokens(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() && in_word {
            out.push((start, &text[start..i]));
            start = i;
            in_word = false;
        } else if !c.is_whitespace() {
            in_word = true;
        }
    }
    if start < text.len() {
        out.push((start, &text[start..]));
    }
    out
}

fn answer_for(prompt: &str) -> String {
    OPTION_LETTERS[hash_byte(prompt) as usize % OPTION_LETTERS.len()].to_string()
}

/// Reverses the `- name` lines of a ranking prompt into a numbered list.
fn ranking_answer(prompt: &str) -> Option<String> {
    if !prompt.contains("rank all of them") {
        return None;
    }
    let names: Vec<&str> = prompt.lines().filter_map(|l| l.strip_prefix("- ")).collect();
    Some(names.iter().rev().enumerate().map(|(i, n)| format!("{}. {n}\n", i + 1)).collect())
}

/// Answers are a pure function of the prompt: an option letter picked by
/// hash, a reversed list for ranking prompts, and per-token logprobs in
/// `(-2, -1]` for echo requests.
pub fn deterministic_reply(call: &MockCall) -> MockReply {
    let text_of = |v: &Value| v.as_str().unwrap_or_default().to_string();
    match call.path.as_str() {
        "/completions" => {
            let prompt = text_of(&call.body["prompt"]);
            if call.body["echo"].as_bool().unwrap_or(false) {
                let toks = pseudo_tokens(&prompt);
                let logprobs: Vec<Value> = toks
                    .iter()
                    .enumerate()
                    .map(|(i, (_, t))| if i == 0 { Value::Null } else { json!(-1.0 - hash_byte(t) as f64 / 256.0) })
                    .collect();
                return MockReply {
                    status: 200,
                    body: json!({"choices": [{"text": prompt, "logprobs": {
                        "tokens": toks.iter().map(|(_, t)| *t).collect::<Vec<_>>(),
                        "token_logprobs": logprobs,
                        "text_offset": toks.iter().map(|(o, _)| *o).collect::<Vec<_>>(),
                    }}]}),
                };
            }
            let text = ranking_answer(&prompt).unwrap_or_else(|| format!(" {}", answer_for(&prompt)));
            MockReply { status: 200, body: json!({"choices": [{"text": text}]}) }
        }
        "/chat/completions" => {
            let prompt = text_of(&call.body["messages"][0]["content"]);
            let text = ranking_answer(&prompt).unwrap_or_else(|| answer_for(&prompt));
            MockReply { status: 200, body: json!({"choices": [{"message": {"role": "assistant", "content": text}}]}) }
        }
        other => MockReply { status: 404, body: json!({"error": format!("no route {other}")}) },
    }
}

/// Fails the first `n` calls with 503, then defers to `inner`.
pub fn flaky(n: usize, inner: Responder) -> Responder {
    let seen = AtomicUsize::new(0);
    Arc::new(move |call| {
        if seen.fetch_add(1, Ordering::SeqCst) < n {
            MockReply { status: 503, body: json!({"error": "try again"}) }
        } else {
            inner(call)
        }
    })
}

pub struct MockServer {
    server: Arc<Server>,
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start() -> Result<Self> {
        Self::start_with(Arc::new(deterministic_reply))
    }

    pub fn start_with(responder: Responder) -> Result<Self> {
        Self::bind("127.0.0.1:0", responder)
    }

    pub fn bind(addr: &str, responder: Responder) -> Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(|e| CollectorError::Config(format!("mock server: {e}")))?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| CollectorError::Config("mock server has no IP address".into()))?;
        let requests = Arc::new(AtomicUsize::new(0));
        let (srv, count) = (server.clone(), requests.clone());
        let handle = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                count.fetch_add(1, Ordering::SeqCst);
                let mut raw = String::new();
                let body = match req.as_reader().read_to_string(&mut raw) {
                    Ok(_) => serde_json::from_str(&raw).unwrap_or(Value::Null),
                    Err(_) => Value::Null,
                };
                let path = req.url().trim_start_matches("/v1").to_string();
                let reply = responder(&MockCall { path, body });
                let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
                let resp = Response::from_string(reply.body.to_string()).with_status_code(reply.status).with_header(header);
                if let Err(e) = req.respond(resp) {
                    log::warn!("mock server could not respond: {e}");
                }
            }
        });
        Ok(Self { server, addr, requests, handle: Some(handle) })
    }

    /// Base URL to hand to a client, e.g. `http://127.0.0.1:PORT/v1`.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Serves until the process exits.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_cover_text() {
        let t = pseudo_tokens("ab  cd\ne");
        assert_eq!(t, vec![(0, "ab"), (2, "  cd"), (6, "\ne")]);
        let joined: String = t.iter().map(|(_, s)| *s).collect();
        assert_eq!(joined, "ab  cd\ne");
    }

    #[test]
    fn replies_are_pure() {
        let call = MockCall { path: "/completions".into(), body: json!({"prompt": "Q\nAnswer: "}) };
        assert_eq!(deterministic_reply(&call).body, deterministic_reply(&call).body);
        let rank = MockCall {
            path: "/chat/completions".into(),
            body: json!({"messages": [{"role": "user", "content": "- a\n- b\nplease rank all of them"}]}),
        };
        assert_eq!(deterministic_reply(&rank).body["choices"][0]["message"]["content"], "1. b\n2. a\n");
        assert_eq!(deterministic_reply(&MockCall { path: "/nope".into(), body: Value::Null }).status, 404);
    }
}
