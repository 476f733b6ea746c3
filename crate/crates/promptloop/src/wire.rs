//! HTTP plumbing for remote backends: one blocking client speaking the
//! chat-completions and embeddings protocols, with bounded retries.
//!
//! Retry discipline: transport failures, HTTP 5xx, and malformed response
//! bodies are retried up to the attempt budget with the configured backoff;
//! HTTP 4xx fails immediately because it signals a configuration problem
//! that waiting will not fix.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::API_KEY_ENV;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("endpoint unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("request rejected with HTTP {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("response violated the protocol: {0}")]
    Protocol(String),
}

/// Attempt budget and the sleeps inserted between attempts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    /// Three attempts with exponential backoff.
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff: vec![
                Duration::from_millis(500),
                Duration::from_secs(1),
                Duration::from_secs(2),
            ],
        }
    }
}

impl RetryPolicy {
    /// Same attempt budget, no sleeping — keeps failure tests fast.
    pub fn without_backoff() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatResponseBody {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingsRequest {
    pub model: String,
    pub input: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingsResponseBody {
    pub data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingDatum {
    pub embedding: Vec<f64>,
}

/// A completed chat call: the assistant text and whether the backend
/// reported a length stop (truncation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatOutcome {
    pub content: String,
    pub truncated: bool,
}

/// Blocking HTTP client shared by the remote environment, remote agent, and
/// remote encoder. Bearer auth is attached when an API key is configured.
#[derive(Debug, Clone)]
pub struct WireClient {
    http: reqwest::blocking::Client,
    retry: RetryPolicy,
    api_key: Option<String>,
}

impl Default for WireClient {
    fn default() -> Self {
        WireClient::from_env()
    }
}

impl WireClient {
    /// Client with the default retry policy and the API key taken from the
    /// process environment, when set.
    pub fn from_env() -> Self {
        WireClient::new(RetryPolicy::default()).with_api_key(std::env::var(API_KEY_ENV).ok())
    }

    pub fn new(retry: RetryPolicy) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("blocking client construction cannot fail with static options");
        WireClient {
            http,
            retry,
            api_key: None,
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// `POST {endpoint}/v1/chat/completions`, returning `choices[0]`.
    pub fn chat(
        &self,
        endpoint: &str,
        model: &str,
        messages: Vec<ChatMessage>,
        max_tokens: u32,
        temperature: f64,
    ) -> Result<ChatOutcome, WireError> {
        let url = format!("{}/v1/chat/completions", endpoint.trim_end_matches('/'));
        let request = ChatRequest {
            model: model.to_string(),
            messages,
            max_tokens,
            temperature,
        };
        let body: ChatResponseBody = self.post_with_retry(&url, &request)?;
        let choice = body
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| WireError::Protocol("chat response contained no choices".into()))?;
        Ok(ChatOutcome {
            truncated: choice.finish_reason.as_deref() == Some("length"),
            content: choice.message.content,
        })
    }

    /// `POST {endpoint}/v1/embeddings`, returning `data[0].embedding`.
    pub fn embed(&self, endpoint: &str, model: &str, input: &str) -> Result<Vec<f64>, WireError> {
        let url = format!("{}/v1/embeddings", endpoint.trim_end_matches('/'));
        let request = EmbeddingsRequest {
            model: model.to_string(),
            input: input.to_string(),
        };
        let body: EmbeddingsResponseBody = self.post_with_retry(&url, &request)?;
        body.data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| WireError::Protocol("embeddings response contained no data".into()))
    }

    fn post_with_retry<T: DeserializeOwned>(
        &self,
        url: &str,
        body: &impl Serialize,
    ) -> Result<T, WireError> {
        let mut last_error = String::from("no attempts made");
        for attempt in 1..=self.retry.attempts.max(1) {
            if attempt > 1 {
                if let Some(delay) = self.retry.backoff.get(attempt as usize - 2) {
                    std::thread::sleep(*delay);
                }
            }
            let mut request = self.http.post(url).json(body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            match request.send() {
                Err(err) => last_error = format!("transport error: {err}"),
                Ok(response) => {
                    let status = response.status();
                    if status.is_client_error() {
                        return Err(WireError::Rejected {
                            status: status.as_u16(),
                            message: response.text().unwrap_or_default(),
                        });
                    }
                    if !status.is_success() {
                        last_error = format!("HTTP {status}");
                        continue;
                    }
                    match response.json::<T>() {
                        Ok(value) => return Ok(value),
                        Err(err) => last_error = format!("malformed response body: {err}"),
                    }
                }
            }
        }
        Err(WireError::Unavailable {
            attempts: self.retry.attempts.max(1),
            message: last_error,
        })
    }
}
