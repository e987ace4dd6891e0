//! Append-only event log, deterministic replay and state hashing.
//!
//! The log is UTF-8 JSONL, one [`Event`] per line, optionally closed by a
//! footer line `{"footer":{...}}` carrying the SHA-256 of every preceding byte
//! and the state hash the log should replay to.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedder::Embedding;
use crate::memory_graph::{EdgeKind, GraphConfig, MemoryGraph, NodeId, NodeKind};
use crate::scalar::Scalar;
use crate::vector_index::{ChunkId, NewChunk, VectorIndex};
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TurnRecorded,
    NodeUpserted,
    EdgeAdded,
    ChunkAdded,
    DocRemoved,
    GraphPruned,
    AnswerGenerated,
    ReflectionStep,
    FallbackExtract,
    LlmError,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TurnRecorded => "turn_recorded",
            Self::NodeUpserted => "node_upserted",
            Self::EdgeAdded => "edge_added",
            Self::ChunkAdded => "chunk_added",
            Self::DocRemoved => "doc_removed",
            Self::GraphPruned => "graph_pruned",
            Self::AnswerGenerated => "answer_generated",
            Self::ReflectionStep => "reflection_step",
            Self::FallbackExtract => "fallback_extract",
            Self::LlmError => "llm_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub seq: u64,
    pub ts: Timestamp,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeUpserted<S> {
    pub node_id: NodeId,
    pub label: String,
    pub kind: NodeKind,
    pub session_id: String,
    #[serde(bound = "S: Scalar")]
    pub embedding: Embedding<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeAdded {
    pub edge_id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkAdded<S> {
    pub chunk_id: ChunkId,
    #[serde(flatten, bound = "S: Scalar")]
    pub chunk: NewChunk<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocRemoved {
    pub doc_name: String,
    pub removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPruned {
    pub max_nodes: usize,
    pub removed: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footer {
    pub event_count: u64,
    pub log_digest: String,
    pub state_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FooterLine {
    footer: Footer,
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("event log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt log at {}: {reason}", seq.map_or(format!("line {line}"), |s| format!("seq {s}")))]
    Corrupt { seq: Option<u64>, line: usize, reason: String },
    #[error("log verification failed: {0}")]
    Verification(String),
}

impl PersistError {
    fn corrupt(seq: Option<u64>, line: usize, reason: impl Into<String>) -> Self {
        Self::Corrupt { seq, line, reason: reason.into() }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn write(v: &serde_json::Value, out: &mut String) {
        match v {
            serde_json::Value::Object(map) => {
                let mut entries: Vec<_> = map.iter().collect();
                entries.sort_by(|a, b| a.0.cmp(b.0));
                out.push('{');
                for (i, (k, v)) in entries.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("string serializes"));
                    out.push(':');
                    write(v, out);
                }
                out.push('}');
            }
            serde_json::Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            scalar => {
                let _ = write!(out, "{scalar}");
            }
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

pub fn snapshot_json<S: Scalar>(graph: &MemoryGraph<S>, index: &VectorIndex<S>) -> String {
    canonical_json(&serde_json::json!({
        "graph": graph.snapshot_value(),
        "index": index.snapshot_value(),
    }))
}

/// SHA-256 of the canonical snapshot, hex encoded.
pub fn state_hash<S: Scalar>(graph: &MemoryGraph<S>, index: &VectorIndex<S>) -> String {
    sha256_hex(snapshot_json(graph, index).as_bytes())
}

/// Event sequence with an optional JSONL file behind it.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Vec<Event>,
    file: Option<File>,
    path: Option<PathBuf>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens or creates a log file. Existing events are loaded; a footer, if
    /// present, is cut off so appends can continue.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, PersistError> {
        let path = path.as_ref().to_path_buf();
        let mut events = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            let parsed = parse_log(&text)?;
            if parsed.footer.is_some() {
                let f = OpenOptions::new().write(true).open(&path)?;
                f.set_len(parsed.body_len as u64)?;
                f.sync_data()?;
            }
            events = parsed.events;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { events, file: Some(file), path: Some(path) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Events with `seq > since`.
    pub fn since(&self, since: u64) -> &[Event] {
        let start = self.events.partition_point(|e| e.seq <= since);
        &self.events[start..]
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    /// Appends an event; with a backing file it is synced before returning.
    pub fn append(
        &mut self,
        ts: Timestamp,
        kind: EventKind,
        payload: serde_json::Value,
    ) -> Result<u64, PersistError> {
        let event = Event { seq: self.last_seq() + 1, ts, kind, payload };
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
        }
        let seq = event.seq;
        self.events.push(event);
        Ok(seq)
    }

    pub fn append_typed<T: Serialize>(
        &mut self,
        ts: Timestamp,
        kind: EventKind,
        payload: &T,
    ) -> Result<u64, PersistError> {
        self.append(ts, kind, serde_json::to_value(payload).expect("payload serializes"))
    }

    /// Event lines as written to disk.
    pub fn body_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }

    pub fn footer(&self, state_hash: &str) -> Footer {
        Footer {
            event_count: self.events.len() as u64,
            log_digest: sha256_hex(self.body_jsonl().as_bytes()),
            state_hash: state_hash.to_owned(),
        }
    }

    /// Body plus footer, the form [`verify_log`] checks.
    pub fn sealed_jsonl(&self, state_hash: &str) -> String {
        let mut out = self.body_jsonl();
        out.push_str(&footer_line(&self.footer(state_hash)));
        out
    }

    /// Writes the footer to the backing file. Reopening the log removes it.
    pub fn seal(&mut self, state_hash: &str) -> Result<Footer, PersistError> {
        let footer = self.footer(state_hash);
        if let Some(file) = &mut self.file {
            file.write_all(footer_line(&footer).as_bytes())?;
            file.sync_data()?;
        }
        Ok(footer)
    }
}

fn footer_line(footer: &Footer) -> String {
    serde_json::to_string(&FooterLine { footer: footer.clone() }).expect("footer serializes") + "\n"
}

#[derive(Debug, Clone)]
pub struct ParsedLog {
    pub events: Vec<Event>,
    pub footer: Option<Footer>,
    /// Byte length of the event lines, excluding the footer.
    pub body_len: usize,
}

/// Parses a JSONL log, checking that sequence numbers run 1, 2, 3, ... and
/// that every kind is known.
pub fn parse_log(text: &str) -> Result<ParsedLog, PersistError> {
    let mut events: Vec<Event> = Vec::new();
    let mut footer = None;
    let mut offset = 0;
    let mut body_len = 0;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches(['\n', '\r']);
        let line_start = offset;
        offset += raw.len();
        if line.trim().is_empty() {
            continue;
        }
        if footer.is_some() {
            return Err(PersistError::corrupt(None, line_no, "content after footer"));
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| PersistError::corrupt(None, line_no, format!("invalid JSON: {e}")))?;
        if value.get("footer").is_some() {
            let parsed: FooterLine = serde_json::from_value(value)
                .map_err(|e| PersistError::corrupt(None, line_no, format!("invalid footer: {e}")))?;
            footer = Some(parsed.footer);
            body_len = line_start;
            continue;
        }
        let seq = value.get("seq").and_then(|s| s.as_u64());
        let expected = events.len() as u64 + 1;
        match seq {
            Some(s) if s == expected => {}
            Some(s) => {
                return Err(PersistError::corrupt(Some(s), line_no, format!("expected seq {expected}")))
            }
            None => return Err(PersistError::corrupt(None, line_no, "missing seq")),
        }
        let event: Event = serde_json::from_value(value).map_err(|e| {
            PersistError::corrupt(seq, line_no, format!("unreadable event: {e}"))
        })?;
        events.push(event);
        body_len = offset;
    }
    Ok(ParsedLog { events, footer, body_len })
}

fn payload<T: DeserializeOwned>(event: &Event) -> Result<T, PersistError> {
    serde_json::from_value(event.payload.clone()).map_err(|e| {
        PersistError::corrupt(Some(event.seq), 0, format!("bad {} payload: {e}", event.kind.as_str()))
    })
}

fn check_id(event: &Event, logged: u64, actual: u64) -> Result<(), PersistError> {
    if logged == actual {
        Ok(())
    } else {
        Err(PersistError::corrupt(
            Some(event.seq),
            0,
            format!("replay produced id {actual}, log recorded {logged}"),
        ))
    }
}

/// Rebuilds both stores by applying mutation events in order. Annotation
/// events (turns, answers, reflection steps, fallbacks, LLM errors) are
/// skipped.
pub fn replay<S: Scalar>(
    events: &[Event],
    dimension: usize,
    graph_config: &GraphConfig,
) -> Result<(MemoryGraph<S>, VectorIndex<S>), PersistError> {
    let mut graph = MemoryGraph::with_config(dimension, graph_config.clone());
    let mut index = VectorIndex::new(dimension);
    for (i, event) in events.iter().enumerate() {
        let expected = i as u64 + 1;
        if event.seq != expected {
            return Err(PersistError::corrupt(Some(event.seq), 0, format!("expected seq {expected}")));
        }
        let fail = |reason: String| PersistError::corrupt(Some(event.seq), 0, reason);
        match event.kind {
            EventKind::NodeUpserted => {
                let p: NodeUpserted<S> = payload(event)?;
                let id = graph
                    .upsert_node(&p.label, p.kind, p.embedding, event.ts, &p.session_id)
                    .map_err(|e| fail(e.to_string()))?;
                check_id(event, p.node_id, id)?;
            }
            EventKind::EdgeAdded => {
                let p: EdgeAdded = payload(event)?;
                let id = graph
                    .add_edge(p.src, p.dst, p.kind, event.ts, p.confidence)
                    .map_err(|e| fail(e.to_string()))?;
                check_id(event, p.edge_id, id)?;
            }
            EventKind::ChunkAdded => {
                let p: ChunkAdded<S> = payload(event)?;
                let id = index.add_chunk(p.chunk).map_err(|e| fail(e.to_string()))?;
                check_id(event, p.chunk_id, id)?;
            }
            EventKind::DocRemoved => {
                let p: DocRemoved = payload(event)?;
                let removed = index.remove_doc(&p.doc_name);
                check_id(event, p.removed as u64, removed as u64)?;
            }
            EventKind::GraphPruned => {
                let p: GraphPruned = payload(event)?;
                let max = NonZeroUsize::new(p.max_nodes).ok_or_else(|| fail("max_nodes is 0".into()))?;
                if graph.prune(max) != p.removed {
                    return Err(fail("pruned set differs from log".into()));
                }
            }
            EventKind::TurnRecorded
            | EventKind::AnswerGenerated
            | EventKind::ReflectionStep
            | EventKind::FallbackExtract
            | EventKind::LlmError => {}
        }
    }
    Ok((graph, index))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verified {
    pub event_count: u64,
    pub state_hash: String,
}

/// Checks a sealed log: the footer digest must match the event bytes and the
/// replayed state must hash to the recorded value.
pub fn verify_log(
    text: &str,
    dimension: usize,
    graph_config: &GraphConfig,
) -> Result<Verified, PersistError> {
    let parsed = parse_log(text)?;
    let footer = parsed
        .footer
        .ok_or_else(|| PersistError::Verification("log has no footer".into()))?;
    let digest = sha256_hex(&text.as_bytes()[..parsed.body_len]);
    if digest != footer.log_digest {
        return Err(PersistError::Verification(format!(
            "log digest mismatch: footer {}, computed {digest}",
            footer.log_digest
        )));
    }
    if footer.event_count != parsed.events.len() as u64 {
        return Err(PersistError::Verification(format!(
            "footer counts {} events, log has {}",
            footer.event_count,
            parsed.events.len()
        )));
    }
    let (graph, index) = replay::<f64>(&parsed.events, dimension, graph_config)?;
    let hash = state_hash(&graph, &index);
    if hash != footer.state_hash {
        return Err(PersistError::Verification(format!(
            "state hash mismatch: footer {}, replayed {hash}",
            footer.state_hash
        )));
    }
    Ok(Verified { event_count: footer.event_count, state_hash: hash })
}
