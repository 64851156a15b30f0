//! Chat-completions client over HTTP.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, FinishReason, GenRequest, GenResponse};

pub const ENV_API_BASE: &str = "RAGSCOPE_API_BASE";
pub const ENV_API_KEY: &str = "RAGSCOPE_API_KEY";
pub const ENV_MODEL: &str = "RAGSCOPE_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    /// Never serialized; read from the environment.
    #[serde(skip)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key: None,
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
        }
    }
}

impl RemoteConfig {
    /// Overrides URL, model and credentials from the environment.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_API_BASE) {
            self.base_url = v;
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            self.model = v;
        }
        self.api_key = std::env::var(ENV_API_KEY).ok();
        self
    }
}

struct Gate {
    busy: Mutex<usize>,
    cv: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut n = self.busy.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.busy.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

enum Attempt {
    Done(GenResponse),
    Retry(String),
    Fatal(BackendError),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let gate = Gate { busy: Mutex::new(0), cv: Condvar::new(), limit: config.max_in_flight.max(1) };
        Ok(Self { config, client, gate })
    }

    fn body(&self, req: &GenRequest) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": req.messages,
            "temperature": req.sampler.temperature,
            "top_p": req.sampler.top_p,
            "max_tokens": req.max_tokens,
            "seed": req.seed,
        })
    }

    fn attempt(&self, url: &str, body: &serde_json::Value) -> Attempt {
        let mut rb = self.client.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = match rb.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry("timeout".into()),
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match status {
            200..=299 => match parse_completion(&text) {
                Ok(r) => Attempt::Done(r),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(BackendError::Auth(status)),
            408 | 429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fatal(BackendError::Http { status, body: text }),
        }
    }
}

fn parse_completion(text: &str) -> Result<GenResponse, BackendError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Malformed("missing choices[0]".into()))?;
    let content = choice
        .pointer("/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| BackendError::Malformed("missing message.content".into()))?;
    let finish = match choice.get("finish_reason").and_then(|f| f.as_str()) {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    Ok(GenResponse { text: content.to_string(), tokens: None, traces: None, finish, attempts: 1 })
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        if req.want_introspection {
            return Err(BackendError::Capability("remote backend cannot expose internal state".into()));
        }
        req.validate()?;
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = self.body(req);
        let _slot = self.gate.enter();
        let total = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=total {
            match self.attempt(&url, &body) {
                Attempt::Done(mut r) => {
                    r.attempts = attempt;
                    return Ok(r);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(why) => {
                    eprintln!("remote attempt {attempt}/{total} failed: {why}");
                    last = why;
                    if attempt < total {
                        std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1)));
                    }
                }
            }
        }
        Err(BackendError::Exhausted { attempts: total, last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_one_choice() {
        let r = parse_completion(r#"{"choices":[{"message":{"role":"assistant","content":"hi"},"finish_reason":"stop"}]}"#).unwrap();
        assert_eq!(r.text, "hi");
        assert!(matches!(parse_completion("{}"), Err(BackendError::Malformed(_))));
    }
}
