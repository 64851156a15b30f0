//! Uniform text-generation interface.

mod cassette;
mod remote;
mod scripted;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::engine::Repetition;
use crate::model::{TokenId, Vocab};
use crate::Model;
use crate::sampling::SamplerParams;
use crate::StepTrace;

pub use cassette::{CassetteBackend, CassetteEntry, RecordingBackend};
pub use remote::{RemoteBackend, RemoteConfig, ENV_API_BASE, ENV_API_KEY, ENV_MODEL};
pub use scripted::ScriptedBackend;
pub use toy::ToyBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
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
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub messages: Vec<ChatMessage>,
    pub sampler: SamplerParams,
    pub max_tokens: usize,
    pub seed: u64,
    #[serde(default)]
    pub repetition: Repetition,
    #[serde(default)]
    pub want_introspection: bool,
    #[serde(default = "default_true")]
    pub stop_at_eos: bool,
}

impl GenRequest {
    pub fn new(messages: Vec<ChatMessage>, sampler: SamplerParams, max_tokens: usize, seed: u64) -> Self {
        Self {
            messages,
            sampler,
            max_tokens,
            seed,
            repetition: Repetition::default(),
            want_introspection: false,
            stop_at_eos: true,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        self.sampler.validate().map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if self.repetition.penalty < 1.0 {
            return Err(BackendError::InvalidRequest("repetition penalty must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenInfo {
    pub chosen: TokenId,
    pub p_chosen: f64,
    pub p1: f64,
    pub p2: f64,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
}

#[derive(Debug, Clone)]
pub struct GenResponse {
    pub text: String,
    pub tokens: Option<Vec<TokenInfo>>,
    pub traces: Option<Vec<StepTrace>>,
    pub finish: FinishReason,
    pub attempts: u32,
}

impl GenResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), tokens: None, traces: None, finish: FinishReason::Stop, attempts: 1 }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("replay mismatch: {0}")]
    Replay(String),
    #[error("{0}")]
    Other(String),
}

/// Direct access to the toy model for strategies that read internal state.
pub trait Introspectable: Send + Sync {
    fn model(&self) -> &Model;
    fn vocab(&self) -> &Vocab;
    fn encode_messages(&self, messages: &[ChatMessage]) -> Vec<TokenId>;
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, request: &GenRequest) -> Result<GenResponse, BackendError>;

    fn introspection(&self) -> Option<&dyn Introspectable> {
        None
    }
}

/// Fails fast with a capability error when `backend` cannot expose internals.
pub fn require_introspection<'a>(
    backend: &'a dyn Backend,
    what: &str,
) -> Result<&'a dyn Introspectable, BackendError> {
    backend
        .introspection()
        .ok_or_else(|| BackendError::Capability(format!("{what} requires internal-state backend")))
}
