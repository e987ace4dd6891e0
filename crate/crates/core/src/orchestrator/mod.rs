//! The answering engine.
//!
//! A user turn is recorded into the graph first, then each reflection
//! iteration retrieves a wider context (more nodes, more hops, more chunks),
//! asks the answerer for a reply and the critic for a score. The loop stops at
//! the first score at or above the threshold, or after `max_iterations`, in
//! which case the best-scoring attempt wins.

mod prompts;

pub use prompts::{render, PromptTemplates};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::num::NonZeroUsize;
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{FairMutex, Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::config::{ConfigError, EngineConfig};
use crate::embedder::{EmbedError, Embedder, Embedding};
use crate::extract::{delta_from_payload, fallback_extract, GraphDelta};
use crate::ingestion::{prepare_document, IngestError, IngestReport};
use crate::llm::{parse_json_payload, ChatMessage, Gateway, LlmError, LlmRole};
use crate::memory_graph::{
    canonical_key, ConceptNode, EdgeId, EdgeKind, GraphError, MemoryGraph, NodeId, NodeKind,
    RelationEdge, ScoredNode, Subgraph, TimeWindow,
};
use crate::persistence::{
    self, ChunkAdded, DocRemoved, EdgeAdded, Event, EventKind, EventLog, GraphPruned, NodeUpserted,
    PersistError,
};
use crate::vector_index::{ChunkId, IndexError, VectorIndex};
use crate::Timestamp;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("text is empty")]
    EmptyText,
    #[error("timestamp must be positive, got {0}")]
    InvalidTimestamp(Timestamp),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// The answerer failed on every iteration.
    #[error("answerer failed on every iteration: {last}")]
    LlmExhausted { last: LlmError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::User => "user",
            Self::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub created_at: Timestamp,
    pub turn_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnEntry {
    pub speaker: Speaker,
    pub text: String,
    pub ts: Timestamp,
    pub node_id: NodeId,
}

struct Session {
    created_at: Timestamp,
    turns: Mutex<Vec<TurnEntry>>,
    /// Serializes `answer` calls for the session in arrival order.
    answer_lock: FairMutex<()>,
}

impl Session {
    fn new(created_at: Timestamp) -> Self {
        Self { created_at, turns: Mutex::new(Vec::new()), answer_lock: FairMutex::new(()) }
    }
}

/// Node fields exposed outside the engine (no embedding).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: NodeId,
    pub label: String,
    pub kind: NodeKind,
    pub created_at: Timestamp,
    pub last_seen: Timestamp,
    pub mention_count: u64,
}

impl<S: crate::Scalar> From<&ConceptNode<S>> for NodeView {
    fn from(n: &ConceptNode<S>) -> Self {
        Self {
            id: n.id,
            label: n.label.clone(),
            kind: n.kind,
            created_at: n.created_at,
            last_seen: n.last_seen,
            mention_count: n.mention_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GraphView {
    pub nodes: Vec<NodeView>,
    pub edges: Vec<RelationEdge>,
}

impl<S: crate::Scalar> From<&Subgraph<S>> for GraphView {
    fn from(s: &Subgraph<S>) -> Self {
        Self { nodes: s.nodes.iter().map(NodeView::from).collect(), edges: s.edges.clone() }
    }
}

impl GraphView {
    pub fn node_ids(&self) -> BTreeSet<NodeId> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    pub fn label(&self, id: NodeId) -> Option<&str> {
        self.nodes.iter().find(|n| n.id == id).map(|n| n.label.as_str())
    }

    /// `label —[KIND]→ label`, one line per edge.
    pub fn relationship_lines(&self) -> Vec<String> {
        self.edges
            .iter()
            .filter_map(|e| Some(format!("{} —[{}]→ {}", self.label(e.src)?, e.kind.as_str(), self.label(e.dst)?)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextChunk {
    pub chunk_id: ChunkId,
    pub cosine: f64,
    pub doc_name: String,
    pub ordinal: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextBundle {
    pub iteration: usize,
    pub scored_nodes: Vec<ScoredNode<f64>>,
    pub subgraph: GraphView,
    pub chunks: Vec<ContextChunk>,
}

impl ContextBundle {
    pub fn is_empty(&self) -> bool {
        self.scored_nodes.is_empty() && self.subgraph.nodes.is_empty() && self.chunks.is_empty()
    }

    pub fn contains_label(&self, label: &str) -> bool {
        let key = canonical_key(label);
        self.subgraph.nodes.iter().any(|n| canonical_key(&n.label) == key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critique {
    pub score: f64,
    pub missing: Vec<String>,
}

impl Critique {
    /// Reads `{"score", "missing"}`, clamping the score into [0, 1].
    pub fn parse(text: &str) -> Option<Self> {
        let v = parse_json_payload(text).ok()?;
        let score = v.get("score")?.as_f64().filter(|s| s.is_finite())?.clamp(0.0, 1.0);
        let missing = match v.get("missing") {
            None | Some(serde_json::Value::Null) => Vec::new(),
            Some(m) => m.as_array()?.iter().filter_map(|x| x.as_str().map(str::to_owned)).collect(),
        };
        Some(Self { score, missing })
    }

    fn unusable(reason: &str) -> Self {
        Self { score: 0.0, missing: vec![reason.to_owned()] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSize {
    pub node_count: usize,
    pub chunk_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerBundle {
    pub answer: String,
    pub iterations_used: usize,
    pub final_score: f64,
    /// Whether the critic cleared the threshold, as opposed to the cap ending the loop.
    pub accepted: bool,
    /// Zero-based iteration the answer came from.
    pub selected_iteration: usize,
    pub missing: Vec<String>,
    pub context_sizes: Vec<ContextSize>,
    pub cited_node_ids: Vec<NodeId>,
    pub cited_chunk_ids: Vec<ChunkId>,
    pub context: ContextBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub turn_node_id: NodeId,
    pub node_ids: Vec<NodeId>,
    pub edge_ids: Vec<EdgeId>,
    pub used_fallback: bool,
    pub delta: GraphDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeHit {
    #[serde(flatten)]
    pub node: NodeView,
    pub score: f64,
    pub components: crate::memory_graph::ScoreComponents<f64>,
}

struct Stores {
    graph: MemoryGraph<f64>,
    index: VectorIndex<f64>,
}

pub struct Engine {
    config: EngineConfig,
    gateway: Gateway,
    embedder: Arc<dyn Embedder<f64>>,
    prompts: PromptTemplates,
    stores: RwLock<Stores>,
    log: Mutex<EventLog>,
    sessions: Mutex<BTreeMap<String, Arc<Session>>>,
    doc_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

struct Attempt {
    iteration: usize,
    answer: String,
    critique: Critique,
    context: ContextBundle,
}

fn doubling(base: usize, iteration: usize) -> usize {
    u32::try_from(iteration)
        .ok()
        .and_then(|i| 2usize.checked_pow(i))
        .and_then(|m| base.checked_mul(m))
        .unwrap_or(usize::MAX)
}

impl Engine {
    /// Builds an engine around an existing log, replaying it to restore the
    /// stores and session transcripts.
    pub fn new(
        config: EngineConfig,
        gateway: Gateway,
        embedder: Arc<dyn Embedder<f64>>,
        log: EventLog,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let prompts = match &config.prompts_dir {
            Some(dir) => PromptTemplates::load(dir)?,
            None => PromptTemplates::default(),
        };
        let dimension = embedder.dimension();
        let (graph, index) = persistence::replay(log.events(), dimension, &config.weights)?;
        let engine = Self {
            config,
            gateway,
            embedder,
            prompts,
            stores: RwLock::new(Stores { graph, index }),
            log: Mutex::new(EventLog::in_memory()),
            sessions: Mutex::new(BTreeMap::new()),
            doc_locks: Mutex::new(HashMap::new()),
        };
        engine.restore_sessions(log.events());
        *engine.log.lock() = log;
        Ok(engine)
    }

    /// Engine wired from configuration alone: gateway, embedder and log.
    pub fn from_config(config: EngineConfig) -> Result<Self, EngineError> {
        let (gateway, _) = config.build_gateway()?;
        let embedder = config.build_embedder();
        let log = match &config.log_path {
            Some(path) => EventLog::open(path)?,
            None => EventLog::in_memory(),
        };
        Self::new(config, gateway, embedder, log)
    }

    fn restore_sessions(&self, events: &[Event]) {
        let mut sessions = self.sessions.lock();
        for e in events.iter().filter(|e| e.kind == EventKind::TurnRecorded) {
            let p = &e.payload;
            let (Some(sid), Some(speaker), Some(text), Some(node_id)) = (
                p.get("session_id").and_then(|v| v.as_str()),
                p.get("speaker").and_then(|v| serde_json::from_value::<Speaker>(v.clone()).ok()),
                p.get("text").and_then(|v| v.as_str()),
                p.get("turn_node_id").and_then(|v| v.as_u64()),
            ) else {
                continue;
            };
            let session = sessions.entry(sid.to_owned()).or_insert_with(|| Arc::new(Session::new(e.ts)));
            session.turns.lock().push(TurnEntry { speaker, text: text.to_owned(), ts: e.ts, node_id });
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn embed(&self, text: &str) -> Result<Embedding<f64>, EngineError> {
        Ok(self.embedder.embed(text)?)
    }

    pub fn create_session(&self, session_id: Option<String>, ts: Timestamp) -> SessionRecord {
        let id = session_id.unwrap_or_else(new_session_id);
        let mut sessions = self.sessions.lock();
        let session = sessions.entry(id.clone()).or_insert_with(|| Arc::new(Session::new(ts))).clone();
        drop(sessions);
        let turn_count = session.turns.lock().len();
        SessionRecord { session_id: id, created_at: session.created_at, turn_count }
    }

    /// Returns the session, creating it if needed.
    pub fn ensure_session(&self, session_id: &str, ts: Timestamp) -> SessionRecord {
        self.create_session(Some(session_id.to_owned()), ts)
    }

    pub fn session(&self, session_id: &str) -> Option<SessionRecord> {
        let s = self.sessions.lock().get(session_id).cloned()?;
        let turn_count = s.turns.lock().len();
        Some(SessionRecord { session_id: session_id.to_owned(), created_at: s.created_at, turn_count })
    }

    pub fn sessions(&self) -> Vec<SessionRecord> {
        let ids: Vec<String> = self.sessions.lock().keys().cloned().collect();
        ids.iter().filter_map(|id| self.session(id)).collect()
    }

    pub fn session_turns(&self, session_id: &str) -> Option<Vec<TurnEntry>> {
        self.get_session(session_id).ok().map(|s| s.turns.lock().clone())
    }

    fn get_session(&self, session_id: &str) -> Result<Arc<Session>, EngineError> {
        self.sessions
            .lock()
            .get(session_id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownSession(session_id.to_owned()))
    }

    fn log_annotation(&self, ts: Timestamp, kind: EventKind, payload: serde_json::Value) -> Result<u64, EngineError> {
        Ok(self.log.lock().append(ts, kind, payload)?)
    }

    fn log_llm_error(&self, ts: Timestamp, session_id: &str, err: &LlmError) -> Result<(), EngineError> {
        tracing::warn!(session_id, error = %err, "llm call failed");
        self.log_annotation(
            ts,
            EventKind::LlmError,
            json!({"session_id": session_id, "error": err.kind(), "message": err.to_string()}),
        )?;
        Ok(())
    }

    /// Asks the extractor for a delta, falling back to the rule-based
    /// extraction when the call fails or its output is unusable.
    fn extract(&self, session_id: &str, text: &str, ts: Timestamp) -> Result<(GraphDelta, bool), EngineError> {
        let prompt = render(&self.prompts.extractor, &[("text", text)]);
        let reason = match self.gateway.complete(LlmRole::Extractor, &[ChatMessage::user(prompt)]) {
            Ok(c) => match parse_json_payload(&c.text).map(|v| delta_from_payload(&v, text)) {
                Ok(Some(delta)) => return Ok((delta, false)),
                Ok(None) => "payload has no entities list".to_owned(),
                Err(e) => e.to_string(),
            },
            Err(e) => {
                self.log_llm_error(ts, session_id, &e)?;
                e.to_string()
            }
        };
        self.log_annotation(ts, EventKind::FallbackExtract, json!({"session_id": session_id, "reason": reason}))?;
        Ok((fallback_extract(text), true))
    }

    /// Captures one conversation turn: a Turn node for the full text, nodes
    /// and relations from extraction, MENTIONS edges from the turn to every
    /// extracted node and a FOLLOWS_UP edge to the session's previous turn.
    pub fn record_turn(
        &self,
        session_id: &str,
        speaker: Speaker,
        text: &str,
        ts: Timestamp,
    ) -> Result<TurnOutcome, EngineError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(EngineError::EmptyText);
        }
        if ts <= 0 {
            return Err(EngineError::InvalidTimestamp(ts));
        }
        let session = self.get_session(session_id)?;
        let (delta, used_fallback) = self.extract(session_id, text, ts)?;

        let turn_embedding = self.embedder.embed(text)?;
        let node_embeddings = delta
            .nodes
            .iter()
            .map(|n| self.embedder.embed(&n.label))
            .collect::<Result<Vec<_>, _>>()?;

        let mut stores = self.stores.write();
        let mut log = self.log.lock();
        let graph = &mut stores.graph;

        let mut upsert = |label: &str, kind: NodeKind, embedding: Embedding<f64>, log: &mut EventLog| {
            let node_id = graph.upsert_node(label, kind, embedding.clone(), ts, session_id)?;
            log.append_typed(
                ts,
                EventKind::NodeUpserted,
                &NodeUpserted { node_id, label: label.to_owned(), kind, session_id: session_id.to_owned(), embedding },
            )?;
            Ok::<_, EngineError>(node_id)
        };
        let turn_node_id = upsert(text, NodeKind::Turn, turn_embedding, &mut log)?;
        let mut by_key: HashMap<String, NodeId> = HashMap::new();
        let mut node_ids = Vec::new();
        for (n, emb) in delta.nodes.iter().zip(node_embeddings) {
            let id = upsert(&n.label, n.kind, emb, &mut log)?;
            by_key.entry(canonical_key(&n.label)).or_insert(id);
            if !node_ids.contains(&id) {
                node_ids.push(id);
            }
        }

        let mut edges: Vec<(NodeId, NodeId, EdgeKind, f64)> = Vec::new();
        for e in &delta.edges {
            let resolve = |label: &str| by_key.get(&canonical_key(label)).copied().or_else(|| graph.find_any_kind(label));
            if let (Some(src), Some(dst)) = (resolve(&e.src_label), resolve(&e.dst_label)) {
                edges.push((src, dst, e.kind, e.confidence));
            }
        }
        for &id in &node_ids {
            edges.push((turn_node_id, id, EdgeKind::Mentions, 1.0));
        }
        let previous_turn = session.turns.lock().last().map(|t| t.node_id);
        if let Some(prev) = previous_turn.filter(|p| graph.contains(*p)) {
            edges.push((turn_node_id, prev, EdgeKind::FollowsUp, 1.0));
        }
        let mut edge_ids = Vec::new();
        for (src, dst, kind, confidence) in edges {
            if src == dst {
                continue;
            }
            let edge_id = graph.add_edge(src, dst, kind, ts, confidence)?;
            log.append_typed(ts, EventKind::EdgeAdded, &EdgeAdded { edge_id, src, dst, kind, confidence })?;
            if !edge_ids.contains(&edge_id) {
                edge_ids.push(edge_id);
            }
        }
        log.append(
            ts,
            EventKind::TurnRecorded,
            json!({"session_id": session_id, "speaker": speaker, "text": text, "turn_node_id": turn_node_id}),
        )?;
        if let Some(max) = self.config.prune.max_nodes.and_then(NonZeroUsize::new) {
            let removed = graph.prune(max);
            if !removed.is_empty() {
                log.append_typed(ts, EventKind::GraphPruned, &GraphPruned { max_nodes: max.get(), removed })?;
            }
        }
        session.turns.lock().push(TurnEntry { speaker, text: text.to_owned(), ts, node_id: turn_node_id });
        Ok(TurnOutcome { turn_node_id, node_ids, edge_ids, used_fallback, delta })
    }

    /// Graph and vector evidence for `query_text`, widened by `iteration`.
    pub fn retrieve_context(
        &self,
        session_id: &str,
        query_text: &str,
        now: Timestamp,
        iteration: usize,
    ) -> Result<ContextBundle, EngineError> {
        let r = self.config.retrieval;
        let k_nodes = doubling(r.nodes, iteration);
        let hops = r.hops.saturating_add(iteration);
        let k_chunks = doubling(r.chunks, iteration);

        let session = self.get_session(session_id)?;
        let seeds: Vec<NodeId> = {
            let turns = session.turns.lock();
            let mut seeds: Vec<NodeId> = Vec::new();
            for t in turns.iter().rev() {
                if seeds.len() == r.seed_turns {
                    break;
                }
                if !seeds.contains(&t.node_id) {
                    seeds.push(t.node_id);
                }
            }
            seeds
        };
        let query = self.embedder.embed(query_text)?;

        let stores = self.stores.read();
        let graph = &stores.graph;
        let seeds: Vec<NodeId> = seeds.into_iter().filter(|s| graph.contains(*s)).collect();
        let scored = graph.query_nodes(&query, now, k_nodes, None, &seeds)?;
        let top: Vec<NodeId> = scored.iter().map(|s| s.node_id).collect();
        let subgraph = if top.is_empty() { Subgraph::default() } else { graph.neighborhood(&top, hops)? };

        let filter: BTreeSet<String> = subgraph
            .nodes
            .iter()
            .filter(|n| n.kind != NodeKind::Turn)
            .map(|n| n.canonical_key.clone())
            .collect();
        let mut hits = stores.index.knn(&query, k_chunks, Some(&filter))?;
        if hits.is_empty() {
            hits = stores.index.knn(&query, k_chunks, None)?;
        }
        let chunks = hits
            .into_iter()
            .filter_map(|h| {
                let c = stores.index.get(h.chunk_id)?;
                Some(ContextChunk {
                    chunk_id: h.chunk_id,
                    cosine: h.cosine,
                    doc_name: c.doc_name.clone(),
                    ordinal: c.ordinal,
                    text: c.text.clone(),
                })
            })
            .collect();
        Ok(ContextBundle { iteration, scored_nodes: scored, subgraph: GraphView::from(&subgraph), chunks })
    }

    fn history_text(&self, session_id: &str) -> Result<String, EngineError> {
        let session = self.get_session(session_id)?;
        let turns = session.turns.lock();
        let skip = turns.len().saturating_sub(self.config.retrieval.history_turns);
        Ok(turns[skip..]
            .iter()
            .map(|t| format!("{}: {}", t.speaker.as_str(), t.text))
            .collect::<Vec<_>>()
            .join("\n"))
    }

    fn answerer_prompt(&self, query: &str, ctx: &ContextBundle, history: &str, feedback: &[String]) -> String {
        let graph = ctx.subgraph.relationship_lines();
        let graph = if graph.is_empty() { "(none)".to_owned() } else { graph.join("\n") };
        let chunks = if ctx.chunks.is_empty() {
            "(none)".to_owned()
        } else {
            ctx.chunks
                .iter()
                .map(|c| format!("[{}#{}] {}", c.doc_name, c.ordinal, c.text))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let feedback = if feedback.is_empty() {
            String::new()
        } else {
            format!("\nA previous draft was judged incomplete. Make sure to cover: {}\n", feedback.join("; "))
        };
        render(
            &self.prompts.answerer,
            &[("graph", &graph), ("chunks", &chunks), ("history", history), ("feedback", &feedback), ("query", query)],
        )
    }

    fn critique(&self, session_id: &str, query: &str, answer: &str, ctx: &ContextBundle, now: Timestamp) -> Result<Critique, EngineError> {
        let mut summary = format!(
            "{} remembered concepts, {} relationships, {} document excerpts.",
            ctx.subgraph.nodes.len(),
            ctx.subgraph.edges.len(),
            ctx.chunks.len()
        );
        for line in ctx.subgraph.relationship_lines() {
            summary.push('\n');
            summary.push_str(&line);
        }
        let prompt = render(&self.prompts.critic, &[("query", query), ("answer", answer), ("context", &summary)]);
        match self.gateway.complete(LlmRole::Critic, &[ChatMessage::user(prompt)]) {
            Ok(c) => Ok(Critique::parse(&c.text).unwrap_or_else(|| Critique::unusable("critic-unparseable"))),
            Err(e) => {
                self.log_llm_error(now, session_id, &e)?;
                Ok(Critique::unusable("critic-unavailable"))
            }
        }
    }

    /// Full pipeline for one user query. The query is recorded before
    /// retrieval and the chosen answer after the loop.
    pub fn answer(&self, session_id: &str, query_text: &str, now: Timestamp) -> Result<AnswerBundle, EngineError> {
        let query = query_text.trim();
        if query.is_empty() {
            return Err(EngineError::EmptyText);
        }
        let session = self.get_session(session_id)?;
        let _in_flight = session.answer_lock.lock();

        self.record_turn(session_id, Speaker::User, query, now)?;
        let history = self.history_text(session_id)?;
        let max_iterations = self.config.reflection.max_iterations;
        let threshold = self.config.reflection.threshold;

        let mut best: Option<Attempt> = None;
        let mut context_sizes = Vec::new();
        let mut feedback: Vec<String> = Vec::new();
        let mut last_error = None;
        let mut accepted = false;
        for iteration in 0..max_iterations {
            let ctx = self.retrieve_context(session_id, query, now, iteration)?;
            let size = ContextSize { node_count: ctx.subgraph.nodes.len(), chunk_count: ctx.chunks.len() };
            context_sizes.push(size);
            let prompt = self.answerer_prompt(query, &ctx, &history, &feedback);
            let answer = match self.gateway.complete(LlmRole::Answerer, &[ChatMessage::user(prompt)]) {
                Ok(c) => c.text,
                Err(e) => {
                    self.log_llm_error(now, session_id, &e)?;
                    self.log_annotation(
                        now,
                        EventKind::ReflectionStep,
                        json!({"session_id": session_id, "iteration": iteration, "status": "answerer_failed",
                               "node_count": size.node_count, "chunk_count": size.chunk_count}),
                    )?;
                    last_error = Some(e);
                    continue;
                }
            };
            let critique = self.critique(session_id, query, &answer, &ctx, now)?;
            let passed = critique.score >= threshold;
            self.log_annotation(
                now,
                EventKind::ReflectionStep,
                json!({"session_id": session_id, "iteration": iteration, "status": if passed { "accepted" } else { "rejected" },
                       "score": critique.score, "missing": critique.missing,
                       "node_count": size.node_count, "chunk_count": size.chunk_count}),
            )?;
            feedback = critique.missing.clone();
            if best.as_ref().is_none_or(|b| critique.score > b.critique.score) {
                best = Some(Attempt { iteration, answer, critique, context: ctx });
            }
            if passed {
                accepted = true;
                break;
            }
        }
        let iterations_used = context_sizes.len();
        let Some(best) = best else {
            let last = last_error.unwrap_or(LlmError::Unconfigured { role: LlmRole::Answerer });
            return Err(EngineError::LlmExhausted { last });
        };

        self.record_turn(session_id, Speaker::Assistant, &best.answer, now)?;
        self.log_annotation(
            now,
            EventKind::AnswerGenerated,
            json!({"session_id": session_id, "answer": best.answer, "iterations_used": iterations_used,
                   "final_score": best.critique.score, "accepted": accepted}),
        )?;
        Ok(AnswerBundle {
            cited_node_ids: best.context.subgraph.nodes.iter().map(|n| n.id).collect(),
            cited_chunk_ids: best.context.chunks.iter().map(|c| c.chunk_id).collect(),
            answer: best.answer,
            iterations_used,
            final_score: best.critique.score,
            accepted,
            selected_iteration: best.iteration,
            missing: best.critique.missing,
            context_sizes,
            context: best.context,
        })
    }

    /// Chunks, embeds and stores a document, replacing any earlier version.
    /// Nothing is written unless every chunk embeds successfully.
    pub fn ingest_document(&self, name: &str, text: &str, ts: Timestamp) -> Result<IngestReport, EngineError> {
        if ts <= 0 {
            return Err(EngineError::InvalidTimestamp(ts));
        }
        let started = Instant::now();
        let doc_lock = self.doc_locks.lock().entry(name.to_owned()).or_default().clone();
        let _doc = doc_lock.lock();
        let chunks = prepare_document(name, text, ts, self.config.chunking, self.embedder.as_ref())?;
        let concept_keys: BTreeSet<String> = chunks.iter().flat_map(|c| c.concept_keys.iter().cloned()).collect();

        let mut stores = self.stores.write();
        if let Some(c) = chunks.iter().find(|c| c.embedding.dimension() != stores.index.dimension()) {
            return Err(IndexError::DimensionMismatch {
                expected: stores.index.dimension(),
                actual: c.embedding.dimension(),
            }
            .into());
        }
        let mut log = self.log.lock();
        let removed = stores.index.remove_doc(name);
        if removed > 0 {
            log.append_typed(ts, EventKind::DocRemoved, &DocRemoved { doc_name: name.to_owned(), removed })?;
        }
        let chunk_count = chunks.len();
        for chunk in chunks {
            let chunk_id = stores.index.add_chunk(chunk.clone())?;
            log.append_typed(ts, EventKind::ChunkAdded, &ChunkAdded { chunk_id, chunk })?;
        }
        Ok(IngestReport {
            doc_name: name.to_owned(),
            chunk_count,
            concept_keys_attached: concept_keys,
            elapsed_ms: started.elapsed().as_millis() as u64,
        })
    }

    /// Scores every node against `query` (or none, for a zero vector) with
    /// no proximity seeds.
    pub fn query_graph(
        &self,
        query: Option<&str>,
        now: Timestamp,
        window: Option<TimeWindow>,
        limit: usize,
    ) -> Result<Vec<NodeHit>, EngineError> {
        let embedding = match query {
            Some(q) => self.embedder.embed(q)?,
            None => Embedding::zeros(self.embedder.dimension()),
        };
        let stores = self.stores.read();
        let hits = stores.graph.query_nodes(&embedding, now, limit, window, &[])?;
        Ok(hits
            .into_iter()
            .map(|h| NodeHit {
                node: NodeView::from(stores.graph.node(h.node_id).expect("scored node exists")),
                score: h.score,
                components: h.components,
            })
            .collect())
    }

    pub fn neighborhood(&self, node_id: NodeId, hops: usize) -> Result<GraphView, EngineError> {
        let stores = self.stores.read();
        Ok(GraphView::from(&stores.graph.neighborhood(&[node_id], hops)?))
    }

    pub fn prune(&self, max_nodes: NonZeroUsize, ts: Timestamp) -> Result<Vec<NodeId>, EngineError> {
        let mut stores = self.stores.write();
        let removed = stores.graph.prune(max_nodes);
        if !removed.is_empty() {
            self.log.lock().append_typed(
                ts,
                EventKind::GraphPruned,
                &GraphPruned { max_nodes: max_nodes.get(), removed: removed.clone() },
            )?;
        }
        Ok(removed)
    }

    /// Read access to the stores under one consistent snapshot.
    pub fn with_stores<R>(&self, f: impl FnOnce(&MemoryGraph<f64>, &VectorIndex<f64>) -> R) -> R {
        let stores = self.stores.read();
        f(&stores.graph, &stores.index)
    }

    pub fn state_hash(&self) -> String {
        self.with_stores(persistence::state_hash)
    }

    pub fn events_since(&self, since: u64) -> Vec<Event> {
        self.log.lock().since(since).to_vec()
    }

    pub fn last_seq(&self) -> u64 {
        self.log.lock().last_seq()
    }

    /// The whole log with a verification footer for the current state.
    pub fn sealed_log(&self) -> String {
        let stores = self.stores.read();
        let hash = persistence::state_hash(&stores.graph, &stores.index);
        self.log.lock().sealed_jsonl(&hash)
    }

    /// Writes the verification footer to the backing log file.
    pub fn seal_log(&self) -> Result<persistence::Footer, EngineError> {
        let stores = self.stores.read();
        let hash = persistence::state_hash(&stores.graph, &stores.index);
        Ok(self.log.lock().seal(&hash)?)
    }
}

fn new_session_id() -> String {
    use std::sync::atomic::{AtomicU64, Ordering};
    use std::time::{SystemTime, UNIX_EPOCH};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let hi = persistence::sha256_hex(format!("{nanos}:{n}:{}", std::process::id()).as_bytes());
    format!("{}-{}-{}-{}-{}", &hi[0..8], &hi[8..12], &hi[12..16], &hi[16..20], &hi[20..32])
}

#[cfg(test)]
mod tests;
