//! Vector store and its file format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic            4 bytes  "SDVS"
//! format_version   u32      1
//! dimension        u32
//! created_at       i64      unix seconds (0 for reproducible builds)
//! embedding_model  u32 length + UTF-8 bytes
//! entry_count      u64
//! entry*           chunk_id, source_id, text (u32 length + UTF-8 each),
//!                  approx_tokens u64, dimension x f64 (IEEE-754 bits)
//! checksum         32 bytes SHA-256 of everything above
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DocumentChunk, RagError, NORM_TOLERANCE};

const MAGIC: &[u8; 4] = b"SDVS";
const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedChunk {
    pub chunk: DocumentChunk,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMetadata {
    pub embedding_model_id: String,
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredChunk<'a> {
    pub entry: &'a EmbeddedChunk,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct VectorStore {
    dimension: usize,
    entries: Vec<EmbeddedChunk>,
    metadata: StoreMetadata,
    index: HashMap<String, usize>,
}

impl PartialEq for VectorStore {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension
            && self.metadata == other.metadata
            && self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.chunk == b.chunk
                    && a.vector.len() == b.vector.len()
                    && a.vector
                        .iter()
                        .zip(&b.vector)
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

pub(crate) fn l2_norm(vector: &[f64]) -> f64 {
    vector.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_unit(vector: &[f64]) -> Result<(), RagError> {
    let norm = l2_norm(vector);
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(RagError::NotUnitNorm { norm });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl VectorStore {
    pub fn new(dimension: usize, embedding_model_id: impl Into<String>, created_at: i64) -> Self {
        Self {
            dimension,
            entries: Vec::new(),
            metadata: StoreMetadata {
                embedding_model_id: embedding_model_id.into(),
                created_at,
            },
            index: HashMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn metadata(&self) -> &StoreMetadata {
        &self.metadata
    }

    pub fn entries(&self) -> &[EmbeddedChunk] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, chunk_id: &str) -> Option<&EmbeddedChunk> {
        self.index.get(chunk_id).map(|&i| &self.entries[i])
    }

    /// Errors unless the store was built with `model_id` at `dimension`.
    pub fn check_compatible(&self, model_id: &str, dimension: usize) -> Result<(), RagError> {
        if self.metadata.embedding_model_id != model_id {
            return Err(RagError::ModelMismatch {
                store: self.metadata.embedding_model_id.clone(),
                runtime: model_id.to_string(),
            });
        }
        if self.dimension != dimension {
            return Err(RagError::Dimension {
                expected: self.dimension,
                actual: dimension,
            });
        }
        Ok(())
    }

    /// Replaces the entry with the same chunk id, or appends.
    pub fn upsert(&mut self, embedded: EmbeddedChunk) -> Result<(), RagError> {
        if embedded.vector.len() != self.dimension {
            return Err(RagError::Dimension {
                expected: self.dimension,
                actual: embedded.vector.len(),
            });
        }
        check_unit(&embedded.vector)?;
        if embedded.chunk.text.is_empty() || embedded.chunk.approx_tokens == 0 {
            return Err(RagError::InvalidChunk(format!(
                "{} has no text",
                embedded.chunk.chunk_id
            )));
        }
        match self.index.get(&embedded.chunk.chunk_id) {
            Some(&i) => self.entries[i] = embedded,
            None => {
                self.index
                    .insert(embedded.chunk.chunk_id.clone(), self.entries.len());
                self.entries.push(embedded);
            }
        }
        Ok(())
    }

    /// Exact top-k by cosine similarity. Scores descend; equal scores order
    /// by ascending chunk id.
    pub fn query(&self, query_vector: &[f64], k: usize) -> Result<Vec<ScoredChunk<'_>>, RagError> {
        if query_vector.len() != self.dimension {
            return Err(RagError::Dimension {
                expected: self.dimension,
                actual: query_vector.len(),
            });
        }
        check_unit(query_vector)?;
        if k == 0 {
            return Err(RagError::InvalidParameters("k must be at least 1".into()));
        }
        let mut scored: Vec<ScoredChunk<'_>> = self
            .entries
            .iter()
            .map(|entry| ScoredChunk {
                entry,
                score: dot(&entry.vector, query_vector),
            })
            .collect();
        let order = |a: &ScoredChunk<'_>, b: &ScoredChunk<'_>| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.entry.chunk.chunk_id.cmp(&b.entry.chunk.chunk_id))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&self.metadata.created_at.to_le_bytes());
        put_str(&mut out, &self.metadata.embedding_model_id);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for entry in &self.entries {
            put_str(&mut out, &entry.chunk.chunk_id);
            put_str(&mut out, &entry.chunk.source_id);
            put_str(&mut out, &entry.chunk.text);
            out.extend_from_slice(&(entry.chunk.approx_tokens as u64).to_le_bytes());
            for x in &entry.vector {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RagError> {
        if bytes.len() < CHECKSUM_LEN {
            return Err(RagError::Integrity {
                offset: 0,
                message: format!("file of {} bytes is too short", bytes.len()),
            });
        }
        let body_len = bytes.len() - CHECKSUM_LEN;
        let (body, trailer) = bytes.split_at(body_len);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(RagError::Integrity {
                offset: body_len as u64,
                message: "checksum mismatch".into(),
            });
        }

        let mut reader = Reader {
            bytes: body,
            pos: 0,
        };
        let magic = reader.take(4)?;
        if magic != MAGIC {
            return Err(reader.error_at(0, "bad magic"));
        }
        let version = reader.u32()?;
        if version != FORMAT_VERSION {
            return Err(reader.error_at(4, &format!("unsupported format version {version}")));
        }
        let dimension = reader.u32()? as usize;
        if dimension == 0 {
            return Err(RagError::Dimension {
                expected: 1,
                actual: 0,
            });
        }
        let created_at = reader.u64()? as i64;
        let model = reader.string()?;
        let count = reader.u64()?;

        let mut store = VectorStore::new(dimension, model, created_at);
        for _ in 0..count {
            let entry_offset = reader.pos as u64;
            let chunk_id = reader.string()?;
            let source_id = reader.string()?;
            let text = reader.string()?;
            let approx_tokens = reader.u64()? as usize;
            let mut vector = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                vector.push(f64::from_bits(reader.u64()?));
            }
            if store.index.contains_key(&chunk_id) {
                return Err(RagError::Integrity {
                    offset: entry_offset,
                    message: format!("duplicate chunk id {chunk_id}"),
                });
            }
            store
                .upsert(EmbeddedChunk {
                    chunk: DocumentChunk {
                        chunk_id,
                        source_id,
                        text,
                        approx_tokens,
                    },
                    vector,
                })
                .map_err(|e| RagError::Integrity {
                    offset: entry_offset,
                    message: e.to_string(),
                })?;
        }
        if reader.pos != body.len() {
            return Err(reader.error_at(reader.pos, "trailing bytes after last entry"));
        }
        Ok(store)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, message: &str) -> RagError {
        RagError::Integrity {
            offset: offset as u64,
            message: message.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], RagError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(self.pos, "unexpected end of data"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, RagError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, RagError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, RagError> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.error_at(at, "invalid UTF-8"))
    }
}

pub fn save_store(store: &VectorStore, destination: &Path) -> Result<(), RagError> {
    std::fs::write(destination, store.to_bytes())?;
    Ok(())
}

pub fn load_store(source: &Path) -> Result<VectorStore, RagError> {
    VectorStore::from_bytes(&std::fs::read(source)?)
}
