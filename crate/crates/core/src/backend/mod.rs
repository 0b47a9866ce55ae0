//! Chat-completion backends.
//!
//! Three implementations share the [`ChatBackend`] trait: [`LiveBackend`]
//! talks to an OpenAI-compatible endpoint, [`MockBackend`] answers from a
//! rule script, and [`CachedBackend`] wraps either with a content-addressed
//! on-disk cache.

mod cache;
mod live;
mod mock;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheDirSummary, CacheEntry, CacheStats, CachedBackend, CanonicalRequest};
pub use live::{LiveBackend, LiveConfig, API_KEY_ENV};
pub use mock::{MockBackend, MockRule, MockScript};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("environment variable {0} is not set")]
    MissingCredentials(&'static str),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited by endpoint: {0}")]
    RateLimited(String),
    #[error("authentication failed ({status}): {message}")]
    Auth { status: u16, message: String },
    #[error("endpoint returned {status}: {message}")]
    Http { status: u16, message: String },
    #[error("endpoint returned an empty completion")]
    EmptyCompletion,
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("no mock rule matches the request")]
    NoMatch,
    #[error("mock script: {0}")]
    Script(String),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
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

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
    /// Routing hint for scripted backends; never sent and never hashed.
    pub item_id: Option<String>,
}

impl ChatRequest {
    /// One system turn, then alternating user/assistant turns ending in user.
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidRequest(m.to_string()));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a non-negative number");
        }
        if self.max_output_tokens == Some(0) {
            return bad("max_output_tokens must be positive");
        }
        let Some((first, rest)) = self.messages.split_first() else {
            return bad("no messages");
        };
        if first.role != Role::System {
            return bad("first message must be the system message");
        }
        if rest.is_empty() {
            return bad("no user message");
        }
        for (i, m) in rest.iter().enumerate() {
            let want = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != want {
                return bad("turns must alternate user/assistant after the system message");
            }
        }
        if rest.len() % 2 == 0 {
            return bad("conversation must end with a user message");
        }
        for m in &self.messages {
            if m.role != Role::Assistant && m.content.trim().is_empty() {
                return bad("system and user messages must not be empty");
            }
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub from_cache: bool,
    pub latency_ms: u64,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Estimates input tokens when the endpoint does not report usage.
pub trait TokenCounter: Send + Sync {
    fn count(&self, messages: &[ChatMessage]) -> u64;
}

/// `ceil(bytes / 4)` over all message contents. Not a BPE tokenizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteEstimate;

impl TokenCounter for ByteEstimate {
    fn count(&self, messages: &[ChatMessage]) -> u64 {
        let bytes: usize = messages.iter().map(|m| m.content.len()).sum();
        (bytes as u64).div_ceil(4)
    }
}
