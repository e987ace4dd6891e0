//! Conversational memory engine.
//!
//! Conversation turns are captured into a time-stamped concept graph
//! ([`memory_graph`]), private documents into an exact cosine index
//! ([`vector_index`]), and answers are produced by role-split LLM calls with a
//! critic-driven reflection loop ([`orchestrator`]). Every mutation lands in an
//! append-only event log ([`persistence`]) so state can be replayed and hashed.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the engine
//! itself runs on `f64` through the aliases below.

pub mod config;
pub mod embedder;
pub mod eval;
pub mod extract;
pub mod ingestion;
pub mod llm;
pub mod memory_graph;
pub mod orchestrator;
pub mod persistence;
pub mod scalar;
pub mod vector_index;

pub use config::EngineConfig;
pub use embedder::{Embedder, Embedding, HashEmbedder, HttpEmbedder};
pub use memory_graph::{EdgeKind, MemoryGraph, NodeKind, ScoredNode};
pub use orchestrator::{AnswerBundle, ContextBundle, Engine, EngineError};
pub use persistence::{Event, EventKind, EventLog};
pub use scalar::Scalar;
pub use vector_index::VectorIndex;

/// Milliseconds since the Unix epoch, UTC.
pub type Timestamp = i64;

pub type Vector = Embedding<f64>;
pub type Vector32 = Embedding<f32>;
pub type Graph = MemoryGraph<f64>;
pub type Graph32 = MemoryGraph<f32>;
pub type Index = VectorIndex<f64>;
pub type Index32 = VectorIndex<f32>;
pub type Rouge = eval::metrics::RougeScores<f64>;
pub type Rouge32 = eval::metrics::RougeScores<f32>;
