//! Remote multimodal backend speaking the OpenAI-compatible chat-completions
//! protocol (local model servers expose the same shape). Images travel inline
//! as base64 data URLs in each request; there is no server-side conversation
//! state.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, ModelBackend};
use crate::model::ImageRef;

/// Environment variables honored by [`HttpBackendConfig::apply_env`].
pub const ENV_BASE_URL: &str = "HGIVR_BASE_URL";
pub const ENV_API_KEY: &str = "HGIVR_API_KEY";
pub const ENV_MODEL: &str = "HGIVR_MODEL";

fn default_timeout_secs() -> u64 {
    120
}
fn default_max_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryConfig {
    /// Maximum retry attempts after the initial request.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig {
            max_retries: 2,
            initial_backoff_ms: 250,
            max_backoff_ms: 4_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retries: RetryConfig,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_output_tokens: Option<u32>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        HttpBackendConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key: None,
            timeout_secs: default_timeout_secs(),
            retries: RetryConfig::default(),
            temperature: 0.0,
            max_output_tokens: None,
            max_in_flight: default_max_in_flight(),
        }
    }

    /// Fills unset fields from the environment. CLI flags are applied by the
    /// caller afterwards, giving CLI > env > file precedence.
    pub fn apply_env(&mut self) {
        if self.base_url.is_empty() {
            if let Ok(v) = std::env::var(ENV_BASE_URL) {
                self.base_url = v;
            }
        }
        if self.model_name.is_empty() {
            if let Ok(v) = std::env::var(ENV_MODEL) {
                self.model_name = v;
            }
        }
        if self.api_key.is_none() {
            if let Ok(v) = std::env::var(ENV_API_KEY) {
                self.api_key = Some(v);
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.base_url.is_empty() {
            return Err("base_url is required (flag, env, or config)".into());
        }
        if self.model_name.is_empty() {
            return Err("model_name is required (flag, env, or config)".into());
        }
        if self.timeout_secs == 0 {
            return Err("timeout must be > 0".into());
        }
        Ok(())
    }
}

/// Counting semaphore capping concurrent requests across parallel episodes.
struct InFlightGate {
    available: Mutex<usize>,
    cv: Condvar,
}

impl InFlightGate {
    fn new(cap: usize) -> Self {
        InFlightGate {
            available: Mutex::new(cap.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
    }

    fn release(&self) {
        *self.available.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
    id: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, String> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| e.to_string())?;
        let id = format!("http:{}", config.model_name);
        let gate = InFlightGate::new(config.max_in_flight);
        Ok(HttpBackend {
            config,
            client,
            gate,
            id,
        })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn image_data_url(image: &ImageRef) -> Result<String, BackendError> {
        match image {
            ImageRef::Inline { b64, media_type } => {
                Ok(format!("data:{media_type};base64,{b64}"))
            }
            ImageRef::Url(url) => Ok(url.clone()),
            ImageRef::Path(path) => {
                let bytes = std::fs::read(path)
                    .map_err(|e| BackendError::Transport(format!("read {path}: {e}")))?;
                let media_type = match path.rsplit('.').next() {
                    Some("png") => "image/png",
                    Some("gif") => "image/gif",
                    Some("webp") => "image/webp",
                    _ => "image/jpeg",
                };
                let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                Ok(format!("data:{media_type};base64,{b64}"))
            }
        }
    }

    /// One chat-completions POST with retry on transport errors, 429, and 5xx.
    /// 4xx (other than 429) is surfaced immediately.
    pub fn chat_request(&self, prompt: &str, image: &ImageRef) -> Result<String, BackendError> {
        let data_url = Self::image_data_url(image)?;
        let mut body = json!({
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": data_url}},
                ],
            }],
        });
        if let Some(max) = self.config.max_output_tokens {
            body["max_tokens"] = json!(max);
        }

        let mut attempt = 0u32;
        let mut backoff = self.config.retries.initial_backoff_ms;
        loop {
            self.gate.acquire();
            let result = self.send_once(&body);
            self.gate.release();
            match result {
                Ok(text) => return Ok(text),
                Err(err) => {
                    let retryable = match &err {
                        BackendError::Transport(_) => true,
                        BackendError::Status { status, .. } => {
                            *status == 429 || *status >= 500
                        }
                        _ => false,
                    };
                    if !retryable || attempt >= self.config.retries.max_retries {
                        return Err(err);
                    }
                    attempt += 1;
                    let jitter = rand::thread_rng().gen_range(0..=backoff / 2 + 1);
                    std::thread::sleep(Duration::from_millis(backoff + jitter));
                    backoff = (backoff * 2).min(self.config.retries.max_backoff_ms);
                }
            }
        }
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<String, BackendError> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            let body_excerpt = text.chars().take(300).collect();
            return Err(BackendError::Status {
                status: status.as_u16(),
                body_excerpt,
            });
        }
        let parsed: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                BackendError::MalformedResponse("missing choices[0].message.content".into())
            })
    }
}

impl ModelBackend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn describe(&self, image: &ImageRef, prompt: &str) -> Result<String, BackendError> {
        self.chat_request(prompt, image)
    }

    fn answer(&self, image: &ImageRef, prompt: &str) -> Result<String, BackendError> {
        self.chat_request(prompt, image)
    }
}
