use std::io::Read;
use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use crate::{check_messages, BackendConfig, ChatBackend, ChatMessage, LlmError};

const EXCERPT_LEN: usize = 300;

/// Blocking client for OpenAI-compatible chat-completion endpoints.
#[derive(Debug)]
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(LlmError),
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &str) -> Attempt {
        let mut req = self
            .agent
            .post(&self.endpoint())
            .header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e @ (ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed)) => {
                return Attempt::Retry(e.to_string())
            }
            Err(e) => return Attempt::Fail(LlmError::Transport { attempts: 1, detail: e.to_string() }),
        };
        let status = resp.status().as_u16();
        let mut text = String::new();
        if let Err(e) = resp.body_mut().as_reader().read_to_string(&mut text) {
            return Attempt::Retry(format!("reading body: {e}"));
        }
        match status {
            200..=299 => match extract_content(&text) {
                Ok(content) => Attempt::Done(content),
                Err(e) => Attempt::Fail(e),
            },
            429 | 500..=599 => Attempt::Retry(format!("status {status}")),
            _ => Attempt::Fail(LlmError::Request {
                status,
                excerpt: text.chars().take(EXCERPT_LEN).collect(),
            }),
        }
    }
}

fn extract_content(text: &str) -> Result<String, LlmError> {
    let v: Value = serde_json::from_str(text).map_err(|e| LlmError::Response(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::Response("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        check_messages(messages)?;
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        })
        .to_string();
        if self.config.log_prompts {
            tracing::debug!(prompt = %body, "chat request");
        }
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let base = self.config.retry_base_secs * 2f64.powi(attempt as i32 - 1);
                let jitter = rand::rng().random_range(0.0..=0.1 * base);
                tracing::warn!(attempt, reason = %last, "retrying chat request");
                std::thread::sleep(Duration::from_secs_f64(base + jitter));
            }
            match self.attempt(&body) {
                Attempt::Done(content) => {
                    if self.config.log_prompts {
                        tracing::debug!(response = %content, "chat response");
                    }
                    return Ok(content);
                }
                Attempt::Retry(reason) => last = reason,
                Attempt::Fail(e) => return Err(e),
            }
        }
        Err(LlmError::Transport {
            attempts: self.config.max_retries + 1,
            detail: last,
        })
    }
}
