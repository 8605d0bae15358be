//! Chat-completion gateway.
//!
//! [`HttpBackend`] speaks the OpenAI-compatible `/chat/completions` format.
//! [`ScriptedBackend`] replays recorded responses so whole runs are
//! reproducible offline.

mod http;
mod scripted;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::HttpBackend;
pub use scripted::{FixtureEntry, MatchKind, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("transport failed after {attempts} attempts: {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("request rejected with status {status}: {excerpt}")]
    Request { status: u16, excerpt: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("no fixture for prompt hash {hash}")]
    FixtureMiss { hash: String },
    #[error("fixture file: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    #[default]
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    pub max_retries: u32,
    pub fixture_path: String,
    /// First backoff delay in seconds; doubles on every retry.
    pub retry_base_secs: f64,
    pub temperature: f64,
    /// Log full prompts and responses at debug level.
    pub log_prompts: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            base_url: String::new(),
            model: String::new(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout: 60.0,
            max_retries: 3,
            fixture_path: String::new(),
            retry_base_secs: 1.0,
            temperature: 0.0,
            log_prompts: false,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        match self.kind {
            BackendKind::Http => {
                if self.base_url.is_empty() || self.model.is_empty() {
                    return Err(LlmError::Config("http backend needs base_url and model".into()));
                }
                if self.timeout.is_nan() || self.timeout <= 0.0 {
                    return Err(LlmError::Config("timeout must be positive".into()));
                }
            }
            BackendKind::Scripted => {
                if self.fixture_path.is_empty() {
                    return Err(LlmError::Config("scripted backend needs fixture_path".into()));
                }
            }
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout)
    }
}

/// A chat-completion provider. Implementations must be usable from several
/// threads; each call is independent.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError>;
}

pub fn check_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
    match messages.first() {
        None => return Err(LlmError::InvalidRequest("no messages".into())),
        Some(m) if m.role != Role::System => {
            return Err(LlmError::InvalidRequest("first message must be a system message".into()))
        }
        _ => {}
    }
    if let Some(i) = messages.iter().position(|m| m.content.is_empty()) {
        return Err(LlmError::InvalidRequest(format!("message {i} is empty")));
    }
    Ok(())
}

/// Stable hex digest of a rendered prompt.
pub fn prompt_hash(messages: &[ChatMessage]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        h.update(m.role.as_str().as_bytes());
        h.update([0u8]);
        h.update(m.content.as_bytes());
        h.update([0x1eu8]);
    }
    hex::encode(&h.finalize()[..16])
}

pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend>, LlmError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Http => Box::new(HttpBackend::new(config.clone())),
        BackendKind::Scripted => Box::new(ScriptedBackend::load(&config.fixture_path)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = [ChatMessage::system("s"), ChatMessage::user("u")];
        let b = [ChatMessage::system("s"), ChatMessage::user("u ")];
        assert_eq!(prompt_hash(&a), prompt_hash(&a.clone()));
        assert_ne!(prompt_hash(&a), prompt_hash(&b));
        // role boundaries matter
        let c = [ChatMessage::system("su")];
        assert_ne!(prompt_hash(&a), prompt_hash(&c));
        assert_eq!(prompt_hash(&a).len(), 32);
    }

    #[test]
    fn message_checks() {
        assert!(check_messages(&[]).is_err());
        assert!(check_messages(&[ChatMessage::user("x")]).is_err());
        assert!(check_messages(&[ChatMessage::system("x"), ChatMessage::user("")]).is_err());
        assert!(check_messages(&[ChatMessage::system("x")]).is_ok());
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::default();
        assert!(c.validate().is_err());
        c.fixture_path = "f.json".into();
        assert!(c.validate().is_ok());
        c.kind = BackendKind::Http;
        assert!(c.validate().is_err());
        c.base_url = "http://localhost:1".into();
        c.model = "m".into();
        assert!(c.validate().is_ok());
    }
}
