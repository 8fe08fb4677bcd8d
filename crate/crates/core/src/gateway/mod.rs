//! Model backends: chat completion with optional image input and text
//! embedding, behind one trait. [`LiveBackend`] talks to any
//! OpenAI-compatible server; [`MockBackend`] replays scripted transcripts and
//! derives embeddings from a hash so everything runs offline.

mod ledger;
mod live;
mod mock;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{format_cost, totals_of, LedgerTotals, PriceTable, UsageEntry, UsageLedger};
pub use live::{
    decode_chat_response, decode_embedding_response, wire_body, LiveBackend, LiveConfig,
};
pub use mock::{
    mock_embedding, MockBackend, TranscriptKey, TranscriptRecord, MOCK_EMBEDDING_MODEL,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("network error after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("server returned status {status}: {body_excerpt}")]
    Protocol { status: u16, body_excerpt: String },
    #[error("cannot decode response: {0}")]
    Decode(String),
    #[error("no scripted reply for {0}")]
    Fixture(String),
    #[error("invalid transcript: {0}")]
    Transcript(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("credential missing: environment variable {0} is not set")]
    Credential(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MediaType {
    #[serde(rename = "image/jpeg")]
    Jpeg,
    #[serde(rename = "image/png")]
    Png,
}

impl MediaType {
    pub fn as_str(self) -> &'static str {
        match self {
            MediaType::Jpeg => "image/jpeg",
            MediaType::Png => "image/png",
        }
    }

    /// Detects the media type from the file signature.
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Some(MediaType::Png)
        } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
            Some(MediaType::Jpeg)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    Image {
        media_type: MediaType,
        data_base64: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![Part::Text(text.into())],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effort {
    Low,
    Medium,
    High,
}

impl Effort {
    pub fn as_str(self) -> &'static str {
        match self {
            Effort::Low => "low",
            Effort::Medium => "medium",
            Effort::High => "high",
        }
    }
}

/// Which workflow step issued a call. Keys mock transcripts and the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallPhase {
    Individual,
    Discussion,
    Consensus,
    Baseline,
}

impl CallPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            CallPhase::Individual => "individual",
            CallPhase::Discussion => "discussion",
            CallPhase::Consensus => "consensus",
            CallPhase::Baseline => "baseline",
        }
    }
}

impl fmt::Display for CallPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifies a call for transcript lookup. Never sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestTag {
    pub case_id: String,
    pub agent_id: String,
    pub phase: CallPhase,
    /// 0 for the first try, 1 for the repair retry.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub effort: Option<Effort>,
    pub max_output_tokens: Option<u32>,
    pub tag: Option<RequestTag>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if self.messages.iter().any(|m| m.parts.is_empty()) {
            return Err(GatewayError::InvalidRequest("message without parts".into()));
        }
        let images = self
            .messages
            .iter()
            .flat_map(|m| &m.parts)
            .filter(|p| matches!(p, Part::Image { .. }))
            .count();
        if images > 1 {
            return Err(GatewayError::InvalidRequest(format!(
                "{images} images in one request; at most one is supported"
            )));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} must be a non-negative number",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, other: Self) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub finish_reason: FinishReason,
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    /// Raw embedding as the backend returns it; see [`embed_text`].
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, GatewayError>;

    fn embedding_model_id(&self) -> &str;

    /// True when replies are scripted, so timestamps should be zeroed.
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Validates the request, then dispatches it.
pub fn complete(
    backend: &dyn Backend,
    request: &ChatRequest,
) -> Result<ChatResponse, GatewayError> {
    request.validate()?;
    backend.complete(request)
}

/// Embeds `text` and L2-normalizes the result whatever the backend returned.
pub fn embed_text(backend: &dyn Backend, text: &str) -> Result<Vec<f64>, GatewayError> {
    if text.trim().is_empty() {
        return Err(GatewayError::InvalidRequest(
            "cannot embed empty text".into(),
        ));
    }
    let mut vector = backend.embed_raw(text)?;
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(GatewayError::Decode(format!(
            "embedding has degenerate norm {norm}"
        )));
    }
    for x in &mut vector {
        *x /= norm;
    }
    Ok(vector)
}
