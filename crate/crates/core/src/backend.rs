//! Chat-completion boundary between the search engine and a model.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::search::Action;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageRef {
    Path { path: String },
    Base64 { media_type: String, data: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Position of this call among sibling samples of one expansion; 0 for
    /// single (greedy) calls.
    #[serde(default)]
    pub sample_index: u32,
}

impl DecodeParams {
    pub const EXPANSION_TEMPERATURE: f64 = 0.8;

    pub fn greedy() -> Self {
        Self { temperature: 0.0, max_tokens: 2048, seed: None, sample_index: 0 }
    }

    pub fn sampling() -> Self {
        Self { temperature: Self::EXPANSION_TEMPERATURE, ..Self::greedy() }
    }
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self::greedy()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRef>,
    /// Sub-window of the image to send instead of the full frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<BoundingBox>,
    /// Which reasoning action produced this prompt, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    pub decode: DecodeParams,
}

impl ChatRequest {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            image: None,
            crop: None,
            action: None,
            decode: DecodeParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_text.is_empty() {
            return Err(BackendError::InvalidRequest("user text is empty".into()));
        }
        if self.decode.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(self.decode.temperature.is_finite() && self.decode.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub latency_ms: u64,
    #[serde(default)]
    pub usage: TokenUsage,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), latency_ms: 0, usage: TokenUsage::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("rate limited")]
    RateLimited,
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("server error {status}: {message}")]
    NonRetriableServerError { status: u16, message: String },
    #[error("script has no response for this request")]
    ScriptExhausted,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    /// Transient failures worth retrying with backoff.
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Timeout | BackendError::TransportFailure(_) | BackendError::RateLimited)
    }
}

pub trait Backend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// Draw up to `n` samples of one prompt, setting `sample_index` 0..n.
    /// Sampling stops early at [`BackendError::ScriptExhausted`], which marks
    /// that no further distinct samples exist. Implementations may issue the
    /// calls concurrently but must keep result order.
    fn sample(&self, request: &ChatRequest, n: usize) -> Vec<Result<ChatResponse, BackendError>> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut req = request.clone();
            req.decode.sample_index = i as u32;
            req.decode.seed = request.decode.seed.map(|s| s.wrapping_add(i as u64));
            let result = self.complete(&req);
            let exhausted = matches!(result, Err(BackendError::ScriptExhausted));
            out.push(result);
            if exhausted {
                break;
            }
        }
        out
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }

    fn sample(&self, request: &ChatRequest, n: usize) -> Vec<Result<ChatResponse, BackendError>> {
        (**self).sample(request, n)
    }
}
