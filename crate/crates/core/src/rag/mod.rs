//! Knowledge-base ingestion and retrieval.
//!
//! Documents are split into overlapping word windows, embedded through the
//! gateway and kept in a [`VectorStore`] that answers exact top-k cosine
//! queries by full scan.

mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentIdentity;

pub use store::{load_store, save_store, EmbeddedChunk, ScoredChunk, StoreMetadata, VectorStore};

pub const DEFAULT_TARGET_TOKENS: usize = 512;
pub const DEFAULT_OVERLAP_TOKENS: usize = 64;
pub const DEFAULT_TOP_K: usize = 8;

/// Unit-norm tolerance for stored and query vectors.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RagError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("vector is not unit norm (norm {norm})")]
    NotUnitNorm { norm: f64 },
    #[error("integrity error at byte {offset}: {message}")]
    Integrity { offset: u64, message: String },
    #[error("invalid chunking parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid chunk: {0}")]
    InvalidChunk(String),
    #[error("embedding model mismatch: store built with {store}, runtime uses {runtime}")]
    ModelMismatch { store: String, runtime: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub chunk_id: String,
    pub source_id: String,
    pub text: String,
    pub approx_tokens: usize,
}

/// Token estimate used throughout: whitespace words times 4/3, rounded up.
pub fn approx_tokens(words: usize) -> usize {
    (words * 4).div_ceil(3)
}

/// Largest word count whose token estimate fits in `tokens`.
fn words_within(tokens: usize) -> usize {
    tokens * 3 / 4
}

pub fn chunk_id(source_id: &str, ordinal: usize) -> String {
    format!("{source_id}#{ordinal:05}")
}

/// Splits `text` into word windows of at most `target_tokens`, consecutive
/// windows sharing the last words of the previous window as overlap.
///
/// Chunk text is the window's words joined by single spaces.
pub fn chunk_document(
    source_id: &str,
    text: &str,
    target_tokens: usize,
    overlap_tokens: usize,
) -> Result<Vec<DocumentChunk>, RagError> {
    if target_tokens <= overlap_tokens {
        return Err(RagError::InvalidParameters(format!(
            "target_tokens ({target_tokens}) must exceed overlap_tokens ({overlap_tokens})"
        )));
    }
    let window = words_within(target_tokens);
    let overlap = words_within(overlap_tokens);
    if window == 0 || overlap >= window {
        return Err(RagError::InvalidParameters(format!(
            "target of {target_tokens} tokens leaves no room beyond an overlap of {overlap_tokens}"
        )));
    }

    let words: Vec<&str> = text.split_whitespace().collect();
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < words.len() {
        let end = (start + window).min(words.len());
        let slice = &words[start..end];
        chunks.push(DocumentChunk {
            chunk_id: chunk_id(source_id, chunks.len()),
            source_id: source_id.to_string(),
            text: slice.join(" "),
            approx_tokens: approx_tokens(slice.len()),
        });
        if end == words.len() {
            break;
        }
        start = end - overlap;
    }
    Ok(chunks)
}

/// Retrieval query for one agent: role, competences and the case prompt.
pub fn build_query_text(identity: &AgentIdentity, case_prompt: &str) -> String {
    let mut query = identity.role_name.clone();
    if !identity.competence_areas.is_empty() {
        query.push_str(": ");
        query.push_str(&identity.competence_areas.join("; "));
    }
    query.push('\n');
    query.push_str(case_prompt);
    query
}
