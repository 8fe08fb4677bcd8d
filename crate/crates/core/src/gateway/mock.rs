//! Scripted backend for offline, reproducible runs.
//!
//! Replies come from a transcript (JSON Lines, one record per call) keyed by
//! `(case_id, agent_id, phase, attempt)`.
//!
//! Embeddings use a documented hash construction so retrieval works offline:
//!
//! 1. Fold the text (lowercase, punctuation to spaces) and split into words.
//! 2. For each word, take the first 8 bytes of
//!    `SHA-256(seed_le || "w" || word)` as a little-endian `u64` `h`; add
//!    `+1` (top bit clear) or `-1` (top bit set) to component `h % dimension`.
//! 3. Seed ChaCha8 with the first 8 bytes of `SHA-256(seed_le || "t" || text)`
//!    and add `0.1 * u` to every component, `u` uniform in `[-1, 1)`.
//! 4. L2-normalize.
//!
//! Step 2 makes texts sharing vocabulary similar; step 3 keeps distinct texts
//! from ever embedding identically.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, CallPhase, ChatRequest, ChatResponse, FinishReason, GatewayError, Usage};
use crate::taxonomy::fold;

pub const MOCK_EMBEDDING_MODEL: &str = "mock-hash-v1";
const DENSE_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TranscriptKey {
    pub case_id: String,
    pub agent_id: String,
    pub phase: CallPhase,
    pub attempt: u32,
}

impl fmt::Display for TranscriptKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(case {}, agent {}, phase {}, attempt {})",
            self.case_id, self.agent_id, self.phase, self.attempt
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub case_id: String,
    pub agent_id: String,
    pub phase: CallPhase,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub attempt: u32,
    pub reply_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl TranscriptRecord {
    fn key(&self) -> TranscriptKey {
        TranscriptKey {
            case_id: self.case_id.clone(),
            agent_id: self.agent_id.clone(),
            phase: self.phase,
            attempt: self.attempt,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    replies: BTreeMap<TranscriptKey, TranscriptRecord>,
    dimension: usize,
    seed: u64,
}

impl MockBackend {
    pub fn new(records: Vec<TranscriptRecord>, dimension: usize) -> Result<Self, GatewayError> {
        if dimension == 0 {
            return Err(GatewayError::InvalidRequest(
                "embedding dimension must be positive".into(),
            ));
        }
        let mut replies = BTreeMap::new();
        for record in records {
            let key = record.key();
            if replies.insert(key.clone(), record).is_some() {
                return Err(GatewayError::Transcript(format!(
                    "duplicate entry for {key}"
                )));
            }
        }
        Ok(Self {
            replies,
            dimension,
            seed: 0,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn parse_transcript(source: &str) -> Result<Vec<TranscriptRecord>, GatewayError> {
        source
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| GatewayError::Transcript(format!("line {}: {e}", i + 1)))
            })
            .collect()
    }

    pub fn from_transcript_file(path: &Path, dimension: usize) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::Transcript(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::new(Self::parse_transcript(&text)?, dimension)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let tag = request.tag.as_ref().ok_or_else(|| {
            GatewayError::Fixture(
                "untagged request (mock replies are keyed by case, agent and phase)".into(),
            )
        })?;
        let key = TranscriptKey {
            case_id: tag.case_id.clone(),
            agent_id: tag.agent_id.clone(),
            phase: tag.phase,
            attempt: tag.attempt,
        };
        let record = self
            .replies
            .get(&key)
            .ok_or_else(|| GatewayError::Fixture(key.to_string()))?;
        Ok(ChatResponse {
            text: record.reply_text.clone(),
            usage: Usage {
                prompt_tokens: record.prompt_tokens,
                completion_tokens: record.completion_tokens,
            },
            finish_reason: FinishReason::Stop,
        })
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        Ok(mock_embedding(text, self.dimension, self.seed))
    }

    fn embedding_model_id(&self) -> &str {
        MOCK_EMBEDDING_MODEL
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

fn hash64(seed: u64, domain: &[u8], data: &[u8]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(domain);
    hasher.update(data);
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Unit-norm pseudo-embedding; see the module docs for the construction.
pub fn mock_embedding(text: &str, dimension: usize, seed: u64) -> Vec<f64> {
    let mut vector = vec![0.0; dimension];
    for word in fold(text).split(' ').filter(|w| !w.is_empty()) {
        let h = hash64(seed, b"w", word.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        vector[(h % dimension as u64) as usize] += sign;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hash64(seed, b"t", text.as_bytes()));
    for x in &mut vector {
        *x += DENSE_WEIGHT * rng.gen_range(-1.0..1.0);
    }
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut vector {
        *x /= norm;
    }
    vector
}
