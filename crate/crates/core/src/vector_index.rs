//! Exact cosine index over document chunks.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::Embedding;
use crate::scalar::Scalar;
use crate::Timestamp;

pub type ChunkId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Chunk<S> {
    pub id: ChunkId,
    pub doc_name: String,
    pub ordinal: usize,
    pub text: String,
    pub embedding: Embedding<S>,
    pub concept_keys: BTreeSet<String>,
    pub created_at: Timestamp,
}

/// A chunk before the index assigns it an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct NewChunk<S> {
    pub doc_name: String,
    pub ordinal: usize,
    pub text: String,
    pub embedding: Embedding<S>,
    pub concept_keys: BTreeSet<String>,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SearchHit<S> {
    pub chunk_id: ChunkId,
    pub cosine: S,
}

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("chunk dimension {actual} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone)]
pub struct VectorIndex<S: Scalar> {
    dimension: usize,
    chunks: BTreeMap<ChunkId, Chunk<S>>,
    by_position: HashMap<(String, usize), ChunkId>,
    next_id: ChunkId,
}

impl<S: Scalar> VectorIndex<S> {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, chunks: BTreeMap::new(), by_position: HashMap::new(), next_id: 1 }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn get(&self, id: ChunkId) -> Option<&Chunk<S>> {
        self.chunks.get(&id)
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk<S>> {
        self.chunks.values()
    }

    pub fn doc_chunk_ids(&self, doc_name: &str) -> Vec<ChunkId> {
        self.chunks.values().filter(|c| c.doc_name == doc_name).map(|c| c.id).collect()
    }

    /// Stores a chunk under a fresh id. A chunk already at the same
    /// `(doc_name, ordinal)` is replaced.
    pub fn add_chunk(&mut self, chunk: NewChunk<S>) -> Result<ChunkId, IndexError> {
        if chunk.embedding.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                actual: chunk.embedding.dimension(),
            });
        }
        let position = (chunk.doc_name.clone(), chunk.ordinal);
        if let Some(old) = self.by_position.remove(&position) {
            self.chunks.remove(&old);
        }
        let id = self.next_id;
        self.next_id += 1;
        self.by_position.insert(position, id);
        self.chunks.insert(
            id,
            Chunk {
                id,
                doc_name: chunk.doc_name,
                ordinal: chunk.ordinal,
                text: chunk.text,
                embedding: chunk.embedding,
                concept_keys: chunk.concept_keys,
                created_at: chunk.created_at,
            },
        );
        Ok(id)
    }

    pub fn remove_doc(&mut self, doc_name: &str) -> usize {
        let ids = self.doc_chunk_ids(doc_name);
        for id in &ids {
            if let Some(c) = self.chunks.remove(id) {
                self.by_position.remove(&(c.doc_name, c.ordinal));
            }
        }
        ids.len()
    }

    /// Exact top-k by cosine, descending, ties by ascending chunk id. With a
    /// filter, only chunks sharing at least one concept key are candidates.
    pub fn knn(
        &self,
        query: &Embedding<S>,
        k: usize,
        concept_filter: Option<&BTreeSet<String>>,
    ) -> Result<Vec<SearchHit<S>>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                actual: query.dimension(),
            });
        }
        let mut hits: Vec<SearchHit<S>> = self
            .chunks
            .values()
            .filter(|c| concept_filter.is_none_or(|f| !f.is_disjoint(&c.concept_keys)))
            .map(|c| SearchHit { chunk_id: c.id, cosine: query.cosine(&c.embedding) })
            .collect();
        hits.sort_by(|a, b| {
            b.cosine
                .partial_cmp(&a.cosine)
                .unwrap_or(Ordering::Equal)
                .then(a.chunk_id.cmp(&b.chunk_id))
        });
        hits.truncate(k);
        Ok(hits)
    }

    pub fn snapshot_value(&self) -> serde_json::Value {
        serde_json::json!({
            "dimension": self.dimension,
            "chunks": self.chunks.values().collect::<Vec<_>>(),
        })
    }
}
