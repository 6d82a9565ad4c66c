//! Provider-agnostic chat completion with bounded retries.
//!
//! A [`Gateway`] wraps one [`LlmProvider`]: either the HTTP provider, which
//! talks to an OpenAI-style chat endpoint through an injectable
//! [`Transport`], or the [`ScriptedProvider`] used for offline runs and
//! tests.

mod http;
mod json;
mod mock;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use self::http::{
    CountingTransport, HttpProvider, HttpReply, ReqwestTransport, Transport, TransportFailure,
};
pub use self::json::{extract_json, ExtractError};
pub use self::mock::{ScriptEntry, ScriptMatcher, ScriptReply, ScriptedProvider};

/// Environment variable holding the API key for the HTTP provider.
pub const API_KEY_ENV: &str = "ALIGNUI_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("call budget of {limit} exhausted")]
    BudgetExceeded { limit: u64 },
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("provider error: {0}")]
    Provider(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_id: String,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            max_output_tokens: 4096,
            model_id: DEFAULT_MODEL.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompts must be non-empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 over model id and both prompts.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.model_id, &self.system_prompt, &self.user_prompt] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub latency: Duration,
}

#[async_trait]
pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;

    async fn call(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            base_delay: Duration::ZERO,
        }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }
}

pub const DEFAULT_MODEL: &str = "gpt-4o";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub provider: ProviderKind,
    pub endpoint: Option<String>,
    pub model_id: String,
    pub mock_script: Option<PathBuf>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub call_budget: Option<u64>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            endpoint: None,
            model_id: DEFAULT_MODEL.to_string(),
            mock_script: None,
            temperature: 0.0,
            max_output_tokens: 4096,
            max_retries: 3,
            backoff_ms: 1000,
            call_budget: None,
        }
    }
}

pub struct Gateway {
    provider: Arc<dyn LlmProvider>,
    retry: RetryPolicy,
    budget: Option<u64>,
    calls: AtomicU64,
    temperature: f64,
    max_output_tokens: u32,
    model_id: String,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.name())
            .field("retry", &self.retry)
            .field("budget", &self.budget)
            .field("calls", &self.calls.load(Ordering::Relaxed))
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn LlmProvider>) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
            budget: None,
            calls: AtomicU64::new(0),
            temperature: 0.0,
            max_output_tokens: 4096,
            model_id: DEFAULT_MODEL.to_string(),
        }
    }

    pub fn scripted(provider: Arc<ScriptedProvider>) -> Self {
        Self::new(provider).with_retry(RetryPolicy::none())
    }

    /// Builds the configured provider. `transport` is only used by the HTTP
    /// provider; the mock never touches it.
    pub fn from_config(
        config: &GatewayConfig,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, LlmError> {
        let provider: Arc<dyn LlmProvider> = match config.provider {
            ProviderKind::Mock => {
                let script = match &config.mock_script {
                    Some(path) => ScriptedProvider::from_jsonl_file(path)?,
                    None => ScriptedProvider::default(),
                };
                Arc::new(script)
            }
            ProviderKind::Http => {
                let endpoint = config
                    .endpoint
                    .clone()
                    .ok_or_else(|| LlmError::Config("http provider needs an endpoint".into()))?;
                let key = std::env::var(API_KEY_ENV)
                    .map_err(|_| LlmError::Auth(format!("{API_KEY_ENV} is not set")))?;
                Arc::new(HttpProvider::new(endpoint, Some(key), transport))
            }
        };
        let mut gw = Self::new(provider).with_retry(RetryPolicy {
            max_retries: config.max_retries,
            base_delay: Duration::from_millis(config.backoff_ms),
        });
        gw.budget = config.call_budget;
        gw.temperature = config.temperature;
        gw.max_output_tokens = config.max_output_tokens;
        gw.model_id = config.model_id.clone();
        Ok(gw)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_budget(mut self, limit: u64) -> Self {
        self.budget = Some(limit);
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Provider calls made so far, retries included.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// A request carrying this gateway's model settings.
    pub fn request(
        &self,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
    ) -> ChatRequest {
        ChatRequest {
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            model_id: self.model_id.clone(),
            ..ChatRequest::new(system_prompt, user_prompt)
        }
    }

    pub async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let mut retry = 0;
        loop {
            self.take_budget()?;
            match self.provider.call(request).await {
                Err(e) if e.is_transient() && retry < self.retry.max_retries => {
                    let delay = self.retry.delay(retry);
                    tracing::warn!(error = %e, retry, ?delay, "transient LLM failure, retrying");
                    tokio::time::sleep(delay).await;
                    retry += 1;
                }
                other => return other,
            }
        }
    }

    fn take_budget(&self) -> Result<(), LlmError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        match self.budget {
            Some(limit) if n >= limit => Err(LlmError::BudgetExceeded { limit }),
            _ => Ok(()),
        }
    }
}
