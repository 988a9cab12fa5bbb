//! Chat-completions wire client.
//!
//! Speaks the OpenAI-compatible `/chat/completions` JSON surface: the
//! rendered query goes out as a single user message, greedy decoding by
//! default. Anything answering that shape (including local inference
//! servers) can be audited.

use std::time::Duration;

use serde_json::json;

use crate::error::{EvalError, Result};

/// Bearer token for the endpoint. Debug/Display never reveal it.
#[derive(Clone, Default)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(secret: impl Into<String>) -> Self {
        Self(secret.into())
    }

    /// Reads the key from an environment variable; absent means no auth.
    pub fn from_env(var: &str) -> Self {
        Self(std::env::var(var).unwrap_or_default())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.0.is_empty() {
            "ApiKey(unset)"
        } else {
            "ApiKey(***)"
        })
    }
}

/// Connection and decoding settings for one endpoint.
#[derive(Debug, Clone)]
pub struct EndpointConfig {
    /// Base URL up to and including the API version, e.g. `http://host/v1`.
    pub base_url: String,
    pub model_name: String,
    pub api_key: ApiKey,
    pub max_concurrency: usize,
    pub timeout: Duration,
    /// Sampling temperature; 0 requests greedy decoding.
    pub temperature: f64,
    pub max_tokens: u32,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key: ApiKey::default(),
            max_concurrency: 4,
            timeout: Duration::from_secs(30),
            temperature: 0.0,
            max_tokens: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return Err(EvalError::Config("max_concurrency must be >= 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(EvalError::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that can answer a rendered query with a completion string.
///
/// Implementations must be shareable across the request worker threads.
pub trait CompletionBackend: Send + Sync {
    /// The canonical request body for a prompt; digested into transcripts.
    fn request_body(&self, prompt: &str) -> String {
        prompt.to_string()
    }

    fn complete(&self, prompt: &str) -> std::result::Result<String, String>;
}

/// Blocking HTTP client for the chat-completions surface.
pub struct ChatCompletionsClient {
    cfg: EndpointConfig,
    client: reqwest::blocking::Client,
}

impl ChatCompletionsClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| EvalError::Config(format!("http client: {e}")))?;
        Ok(Self { cfg, client })
    }

    fn body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        })
    }
}

impl CompletionBackend for ChatCompletionsClient {
    fn request_body(&self, prompt: &str) -> String {
        self.body(prompt).to_string()
    }

    fn complete(&self, prompt: &str) -> std::result::Result<String, String> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut req = self.client.post(&url).json(&self.body(prompt));
        if !self.cfg.api_key.is_empty() {
            req = req.bearer_auth(self.cfg.api_key.expose());
        }
        let response = req.send().map_err(|e| format!("send: {e}"))?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("status {status}"));
        }
        let value: serde_json::Value = response.json().map_err(|e| format!("body: {e}"))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response missing choices[0].message.content".to_string())
    }
}
