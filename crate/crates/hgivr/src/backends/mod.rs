//! Model backend contract and implementations. Describe and answer calls are
//! independent stateless requests; all context travels in the prompt.

mod http;
mod scripted;
mod stochastic;

pub use http::{HttpBackend, HttpBackendConfig, RetryConfig};
pub use scripted::ScriptedBackend;
pub use stochastic::{StochasticBackend, StochasticBackendConfig};

use crate::model::ImageRef;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {status}: {body_excerpt}")]
    Status { status: u16, body_excerpt: String },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("script exhausted: no scripted {kind} entry at ordinal {ordinal}")]
    ScriptExhausted { kind: &'static str, ordinal: usize },
}

impl BackendError {
    /// Transport-class failures abort an episode after retries; script
    /// exhaustion is a test-configuration error instead.
    pub fn is_transport(&self) -> bool {
        !matches!(self, BackendError::ScriptExhausted { .. })
    }
}

pub trait ModelBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn supports_images(&self) -> bool {
        true
    }

    fn describe(&self, image: &ImageRef, prompt: &str) -> Result<String, BackendError>;

    fn answer(&self, image: &ImageRef, prompt: &str) -> Result<String, BackendError>;
}
