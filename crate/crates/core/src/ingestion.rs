//! Document chunking and chunk preparation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::{EmbedError, Embedder};
use crate::extract::concept_keys;
use crate::scalar::Scalar;
use crate::vector_index::NewChunk;
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    /// Window length in characters.
    pub size: usize,
    /// Characters shared by consecutive windows.
    pub overlap: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self { size: 512, overlap: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextChunk {
    pub ordinal: usize,
    /// Offset of the first character, counted in chars.
    pub start: usize,
    pub text: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("chunk size {size} must exceed overlap {overlap}")]
    InvalidChunking { size: usize, overlap: usize },
    #[error("empty document")]
    EmptyDocument,
    #[error("document name is empty")]
    EmptyName,
    #[error("embedding failed: {0}")]
    Embed(String),
}

impl From<EmbedError> for IngestError {
    fn from(e: EmbedError) -> Self {
        IngestError::Embed(e.to_string())
    }
}

/// Character windows advancing by `size - overlap`. The last window may be
/// short; empty text yields no chunks.
pub fn chunk_text(text: &str, config: ChunkingConfig) -> Result<Vec<TextChunk>, IngestError> {
    let ChunkingConfig { size, overlap } = config;
    if size <= overlap {
        return Err(IngestError::InvalidChunking { size, overlap });
    }
    let chars: Vec<char> = text.chars().collect();
    let stride = size - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let end = (start + size).min(chars.len());
        out.push(TextChunk { ordinal: out.len(), start, text: chars[start..end].iter().collect() });
        if end == chars.len() {
            break;
        }
        start += stride;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub doc_name: String,
    pub chunk_count: usize,
    pub concept_keys_attached: BTreeSet<String>,
    pub elapsed_ms: u64,
}

/// Chunks, embeds and tags a document without touching any store. Fails as a
/// whole if any chunk cannot be embedded.
pub fn prepare_document<S: Scalar>(
    name: &str,
    text: &str,
    ts: Timestamp,
    chunking: ChunkingConfig,
    embedder: &dyn Embedder<S>,
) -> Result<Vec<NewChunk<S>>, IngestError> {
    if name.trim().is_empty() {
        return Err(IngestError::EmptyName);
    }
    if text.trim().is_empty() {
        return Err(IngestError::EmptyDocument);
    }
    chunk_text(text, chunking)?
        .into_iter()
        .map(|c| {
            Ok(NewChunk {
                doc_name: name.to_owned(),
                ordinal: c.ordinal,
                embedding: embedder.embed(&c.text)?,
                concept_keys: concept_keys(&c.text),
                text: c.text,
                created_at: ts,
            })
        })
        .collect()
}
