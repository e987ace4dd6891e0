//! Text to vector providers.
//!
//! [`HashEmbedder`] is fully deterministic and needs no network: every word and
//! each of its character trigrams is hashed with 64-bit FNV-1a into one of 64
//! signed buckets, and the bucket vector is L2-normalized. [`HttpEmbedder`]
//! calls a remote embedding endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Dense vector, unit L2 norm or all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound = "S: Scalar")]
pub struct Embedding<S> {
    values: Vec<S>,
}

impl<S: Scalar> Embedding<S> {
    pub fn zeros(dimension: usize) -> Self {
        Self { values: vec![S::zero(); dimension] }
    }

    /// Scales `values` to unit norm; an all-zero input stays zero.
    pub fn normalized(values: Vec<S>) -> Self {
        let mut out = Self { values };
        let norm = out.norm();
        if norm > S::zero() {
            for v in &mut out.values {
                *v = *v / norm;
            }
        }
        out
    }

    /// Wraps values without normalizing them.
    pub fn from_raw(values: Vec<S>) -> Self {
        Self { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub fn norm(&self) -> S {
        self.values.iter().map(|v| *v * *v).sum::<S>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }

    /// True for the zero vector or a vector of unit norm within tolerance.
    pub fn is_unit_or_zero(&self) -> bool {
        self.is_zero() || (self.norm().as_f64() - 1.0).abs() <= S::NORM_TOLERANCE
    }

    pub fn dot(&self, other: &Self) -> S {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| *a * *b)
            .sum()
    }

    /// Cosine similarity clamped to [-1, 1]; 0 when either side is zero.
    pub fn cosine(&self, other: &Self) -> S {
        let denom = self.norm() * other.norm();
        if denom.is_zero() {
            return S::zero();
        }
        (self.dot(other) / denom).max(-S::one()).min(S::one())
    }

    pub fn cast<T: Scalar>(&self) -> Embedding<T> {
        Embedding {
            values: self.values.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    /// Network-level failure; worth retrying.
    #[error("embedding transport failure: {0}")]
    Transport(String),
    #[error("embedding endpoint returned status {0}")]
    Status(u16),
    /// Provider and index disagree on dimension; a configuration bug.
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding response unusable: {0}")]
    InvalidResponse(String),
}

pub trait Embedder<S: Scalar>: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding<S>, EmbedError>;
}

pub const HASH_DIMENSION: usize = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder;

impl HashEmbedder {
    pub fn new() -> Self {
        Self
    }

    /// Signed bucket counts before normalization.
    pub fn bucket_counts(text: &str) -> [i64; HASH_DIMENSION] {
        let mut buckets = [0i64; HASH_DIMENSION];
        let mut add = |token: &str| {
            let h = fnv1a64(token.as_bytes());
            let sign = if h >> 63 == 0 { 1 } else { -1 };
            buckets[(h % HASH_DIMENSION as u64) as usize] += sign;
        };
        for word in words(text) {
            add(&word);
            let chars: Vec<char> = word.chars().collect();
            for tri in chars.windows(3) {
                add(&tri.iter().collect::<String>());
            }
        }
        buckets
    }

    pub fn embed_text<S: Scalar>(&self, text: &str) -> Embedding<S> {
        let counts = Self::bucket_counts(text);
        Embedding::normalized(counts.iter().map(|c| S::of(*c as f64)).collect())
    }
}

impl<S: Scalar> Embedder<S> for HashEmbedder {
    fn dimension(&self) -> usize {
        HASH_DIMENSION
    }

    fn embed(&self, text: &str) -> Result<Embedding<S>, EmbedError> {
        Ok(self.embed_text(text))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

/// Remote provider: `POST {"input": text}` answered by `{"embedding": [...]}`.
pub struct HttpEmbedder {
    endpoint: String,
    dimension: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

    pub fn new(endpoint: impl Into<String>, dimension: usize) -> Self {
        Self::with_timeout(endpoint, dimension, Self::DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(endpoint: impl Into<String>, dimension: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.into(), dimension, agent }
    }
}

impl<S: Scalar> Embedder<S> for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding<S>, EmbedError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { input: text })
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(EmbedError::Status(status));
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::InvalidResponse(e.to_string()))?;
        if body.embedding.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                actual: body.embedding.len(),
            });
        }
        if body.embedding.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidResponse("non-finite component".into()));
        }
        Ok(Embedding::normalized(body.embedding.into_iter().map(S::of).collect()))
    }
}
