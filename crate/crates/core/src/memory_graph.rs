//! Temporal concept graph.
//!
//! Nodes are deduplicated on `(canonical_key, kind)` and on embedding
//! similarity; edges on `(src, dst, kind)`. Every element carries
//! `created_at`/`last_seen` timestamps supplied by the caller, so the store
//! never reads a wall clock and replays are deterministic.

use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::Embedding;
use crate::scalar::Scalar;
use crate::Timestamp;

pub type NodeId = u64;
pub type EdgeId = u64;

pub const DAY_MS: i64 = 24 * 60 * 60 * 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Entity,
    Topic,
    Preference,
    Turn,
}

impl NodeKind {
    /// Lenient parse used for LLM output; unknown names map to `None`.
    pub fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "entity" => Some(Self::Entity),
            "topic" => Some(Self::Topic),
            "preference" => Some(Self::Preference),
            "turn" => Some(Self::Turn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeKind {
    RelatesTo,
    Prefers,
    Mentions,
    FollowsUp,
    About,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RelatesTo => "RELATES_TO",
            Self::Prefers => "PREFERS",
            Self::Mentions => "MENTIONS",
            Self::FollowsUp => "FOLLOWS_UP",
            Self::About => "ABOUT",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_uppercase().replace([' ', '-'], "_").as_str() {
            "RELATES_TO" => Some(Self::RelatesTo),
            "PREFERS" => Some(Self::Prefers),
            "MENTIONS" => Some(Self::Mentions),
            "FOLLOWS_UP" => Some(Self::FollowsUp),
            "ABOUT" => Some(Self::About),
            _ => None,
        }
    }
}

/// Label case-folded with whitespace runs collapsed to single spaces.
pub fn canonical_key(label: &str) -> String {
    label.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ConceptNode<S> {
    pub id: NodeId,
    pub label: String,
    pub canonical_key: String,
    pub kind: NodeKind,
    pub embedding: Embedding<S>,
    pub created_at: Timestamp,
    pub last_seen: Timestamp,
    pub mention_count: u64,
    pub session_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub id: EdgeId,
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
    pub created_at: Timestamp,
    pub last_seen: Timestamp,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ScoreComponents<S> {
    pub semantic: S,
    pub recency: S,
    pub proximity: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ScoredNode<S> {
    pub node_id: NodeId,
    pub score: S,
    pub components: ScoreComponents<S>,
}

/// Inclusive bounds on `last_seen`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub from: Timestamp,
    pub to: Timestamp,
}

impl TimeWindow {
    pub fn contains(&self, ts: Timestamp) -> bool {
        self.from <= ts && ts <= self.to
    }
}

/// Retrieval weights and merge policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub semantic: f64,
    pub recency: f64,
    pub proximity: f64,
    /// Recency decay constant in milliseconds.
    pub tau_ms: f64,
    pub merge_threshold: f64,
    pub max_hops: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            semantic: 0.6,
            recency: 0.25,
            proximity: 0.15,
            tau_ms: (30 * DAY_MS) as f64,
            merge_threshold: 0.92,
            max_hops: 3,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node label is empty")]
    EmptyLabel,
    #[error("timestamp must be positive, got {0}")]
    NonPositiveTimestamp(Timestamp),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding dimension {actual} does not match graph dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding is neither unit-norm nor zero")]
    NotNormalized,
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
}

/// Nodes and the edges among them, both in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Subgraph<S> {
    pub nodes: Vec<ConceptNode<S>>,
    pub edges: Vec<RelationEdge>,
}

impl<S> Default for Subgraph<S> {
    fn default() -> Self {
        Self { nodes: Vec::new(), edges: Vec::new() }
    }
}

#[derive(Serialize)]
struct EdgeSnapshot {
    src: NodeId,
    dst: NodeId,
    kind: EdgeKind,
    created_at: Timestamp,
    last_seen: Timestamp,
    confidence: f64,
}

#[derive(Debug, Clone)]
pub struct MemoryGraph<S: Scalar> {
    config: GraphConfig,
    dimension: usize,
    nodes: BTreeMap<NodeId, ConceptNode<S>>,
    keys: HashMap<(String, NodeKind), NodeId>,
    edges: BTreeMap<EdgeId, RelationEdge>,
    edge_keys: HashMap<(NodeId, NodeId, EdgeKind), EdgeId>,
    incident: HashMap<NodeId, BTreeSet<EdgeId>>,
    next_node: NodeId,
    next_edge: EdgeId,
}

impl<S: Scalar> MemoryGraph<S> {
    pub fn new(dimension: usize) -> Self {
        Self::with_config(dimension, GraphConfig::default())
    }

    pub fn with_config(dimension: usize, config: GraphConfig) -> Self {
        Self {
            config,
            dimension,
            nodes: BTreeMap::new(),
            keys: HashMap::new(),
            edges: BTreeMap::new(),
            edge_keys: HashMap::new(),
            incident: HashMap::new(),
            next_node: 1,
            next_edge: 1,
        }
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&ConceptNode<S>> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ConceptNode<S>> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &RelationEdge> {
        self.edges.values()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn find(&self, label: &str, kind: NodeKind) -> Option<NodeId> {
        self.keys.get(&(canonical_key(label), kind)).copied()
    }

    /// Lowest-id node with this canonical key, of any kind.
    pub fn find_any_kind(&self, label: &str) -> Option<NodeId> {
        let key = canonical_key(label);
        self.nodes.values().find(|n| n.canonical_key == key).map(|n| n.id)
    }

    pub fn edge_between(&self, src: NodeId, dst: NodeId, kind: EdgeKind) -> Option<&RelationEdge> {
        self.edge_keys.get(&(src, dst, kind)).and_then(|id| self.edges.get(id))
    }

    /// Inserts a node or merges it into the earliest existing node that
    /// shares its key or is within the merge threshold by cosine.
    pub fn upsert_node(
        &mut self,
        label: &str,
        kind: NodeKind,
        embedding: Embedding<S>,
        ts: Timestamp,
        session_id: &str,
    ) -> Result<NodeId, GraphError> {
        if ts <= 0 {
            return Err(GraphError::NonPositiveTimestamp(ts));
        }
        let key = canonical_key(label);
        if key.is_empty() {
            return Err(GraphError::EmptyLabel);
        }
        if embedding.dimension() != self.dimension {
            return Err(GraphError::DimensionMismatch {
                expected: self.dimension,
                actual: embedding.dimension(),
            });
        }
        if !embedding.is_unit_or_zero() {
            return Err(GraphError::NotNormalized);
        }

        let threshold = S::of(self.config.merge_threshold);
        let mut target = self.keys.get(&(key.clone(), kind)).copied();
        if !embedding.is_zero() {
            // BTreeMap iteration is id-ascending, so the first hit is the earliest.
            let similar = self
                .nodes
                .values()
                .filter(|n| n.kind == kind)
                .find(|n| n.embedding.cosine(&embedding) >= threshold)
                .map(|n| n.id);
            target = match (target, similar) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
        }

        if let Some(id) = target {
            let node = self.nodes.get_mut(&id).expect("indexed node exists");
            node.mention_count += 1;
            node.last_seen = node.last_seen.max(ts);
            node.session_ids.insert(session_id.to_owned());
            return Ok(id);
        }

        let id = self.next_node;
        self.next_node += 1;
        self.keys.insert((key.clone(), kind), id);
        self.nodes.insert(
            id,
            ConceptNode {
                id,
                label: label.trim().to_owned(),
                canonical_key: key,
                kind,
                embedding,
                created_at: ts,
                last_seen: ts,
                mention_count: 1,
                session_ids: BTreeSet::from([session_id.to_owned()]),
            },
        );
        Ok(id)
    }

    pub fn add_edge(
        &mut self,
        src: NodeId,
        dst: NodeId,
        kind: EdgeKind,
        ts: Timestamp,
        confidence: f64,
    ) -> Result<EdgeId, GraphError> {
        for id in [src, dst] {
            if !self.nodes.contains_key(&id) {
                return Err(GraphError::UnknownNode(id));
            }
        }
        if src == dst {
            return Err(GraphError::SelfLoop(src));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GraphError::InvalidConfidence(confidence));
        }
        if ts <= 0 {
            return Err(GraphError::NonPositiveTimestamp(ts));
        }
        if let Some(&id) = self.edge_keys.get(&(src, dst, kind)) {
            let edge = self.edges.get_mut(&id).expect("indexed edge exists");
            edge.last_seen = edge.last_seen.max(ts);
            edge.confidence = edge.confidence.max(confidence);
            return Ok(id);
        }
        let id = self.next_edge;
        self.next_edge += 1;
        self.edges.insert(
            id,
            RelationEdge { id, src, dst, kind, created_at: ts, last_seen: ts, confidence },
        );
        self.edge_keys.insert((src, dst, kind), id);
        self.incident.entry(src).or_default().insert(id);
        self.incident.entry(dst).or_default().insert(id);
        Ok(id)
    }

    fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.incident.get(&id).into_iter().flatten().map(move |eid| {
            let e = &self.edges[eid];
            if e.src == id {
                e.dst
            } else {
                e.src
            }
        })
    }

    /// Undirected multi-source BFS distances, bounded by `max_hops`.
    fn hop_distances(&self, sources: &[NodeId], max_hops: usize) -> HashMap<NodeId, usize> {
        let mut dist = HashMap::new();
        let mut queue = VecDeque::new();
        for &s in sources {
            if self.nodes.contains_key(&s) && !dist.contains_key(&s) {
                dist.insert(s, 0);
                queue.push_back(s);
            }
        }
        while let Some(id) = queue.pop_front() {
            let d = dist[&id];
            if d == max_hops {
                continue;
            }
            for next in self.neighbors(id) {
                if let Entry::Vacant(slot) = dist.entry(next) {
                    slot.insert(d + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    /// `exp(-age / tau)`; ages below zero (clock skew) count as zero.
    pub fn recency(&self, now: Timestamp, last_seen: Timestamp) -> S {
        let age = (now - last_seen).max(0) as f64;
        (-S::of(age) / S::of(self.config.tau_ms)).exp()
    }

    pub fn score_node(&self, node: &ConceptNode<S>, query: &Embedding<S>, now: Timestamp, hops: Option<usize>) -> ScoredNode<S> {
        let half = S::of(0.5);
        let semantic = ((query.cosine(&node.embedding) + S::one()) * half).max(S::zero()).min(S::one());
        let recency = self.recency(now, node.last_seen);
        let proximity = hops.map_or(S::zero(), |h| S::one() / S::of((1 + h) as f64));
        let score = S::of(self.config.semantic) * semantic
            + S::of(self.config.recency) * recency
            + S::of(self.config.proximity) * proximity;
        ScoredNode {
            node_id: node.id,
            score,
            components: ScoreComponents { semantic, recency, proximity },
        }
    }

    /// Exact top-k over every node by the composite temporal-semantic score.
    pub fn query_nodes(
        &self,
        query: &Embedding<S>,
        now: Timestamp,
        k: usize,
        window: Option<TimeWindow>,
        seeds: &[NodeId],
    ) -> Result<Vec<ScoredNode<S>>, GraphError> {
        if k == 0 {
            return Err(GraphError::ZeroK);
        }
        if query.dimension() != self.dimension {
            return Err(GraphError::DimensionMismatch {
                expected: self.dimension,
                actual: query.dimension(),
            });
        }
        let hops = self.hop_distances(seeds, self.config.max_hops);
        let mut scored: Vec<ScoredNode<S>> = self
            .nodes
            .values()
            .filter(|n| window.is_none_or(|w| w.contains(n.last_seen)))
            .map(|n| self.score_node(n, query, now, hops.get(&n.id).copied()))
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.node_id.cmp(&b.node_id))
        });
        scored.truncate(k);
        Ok(scored)
    }

    /// Every node within `hops` undirected steps of `ids`, with all edges
    /// whose endpoints are both included.
    pub fn neighborhood(&self, ids: &[NodeId], hops: usize) -> Result<Subgraph<S>, GraphError> {
        if let Some(&missing) = ids.iter().find(|id| !self.nodes.contains_key(id)) {
            return Err(GraphError::UnknownNode(missing));
        }
        let included: BTreeSet<NodeId> = self.hop_distances(ids, hops).into_keys().collect();
        Ok(self.induced(&included))
    }

    fn induced(&self, ids: &BTreeSet<NodeId>) -> Subgraph<S> {
        let nodes = ids.iter().map(|id| self.nodes[id].clone()).collect();
        let mut edges: Vec<RelationEdge> = ids
            .iter()
            .filter_map(|id| self.incident.get(id))
            .flatten()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|eid| &self.edges[eid])
            .filter(|e| ids.contains(&e.src) && ids.contains(&e.dst))
            .cloned()
            .collect();
        edges.sort_by_key(|e| (e.src, e.dst, e.kind));
        Subgraph { nodes, edges }
    }

    /// Retention rank used by [`prune`](Self::prune): recency relative to the
    /// newest `last_seen` in the store, times mention count.
    pub fn retention_rank(&self, node: &ConceptNode<S>) -> S {
        let newest = self.nodes.values().map(|n| n.last_seen).max().unwrap_or(0);
        self.recency(newest, node.last_seen) * S::of(node.mention_count as f64)
    }

    /// Removes the lowest-ranked nodes until at most `max_nodes` remain.
    /// Returns the removed ids in removal order.
    pub fn prune(&mut self, max_nodes: NonZeroUsize) -> Vec<NodeId> {
        let excess = self.nodes.len().saturating_sub(max_nodes.get());
        if excess == 0 {
            return Vec::new();
        }
        let mut ranked: Vec<(S, NodeId)> =
            self.nodes.values().map(|n| (self.retention_rank(n), n.id)).collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        let victims: Vec<NodeId> = ranked.into_iter().take(excess).map(|(_, id)| id).collect();
        for id in &victims {
            self.remove_node(*id);
        }
        victims
    }

    fn remove_node(&mut self, id: NodeId) {
        let Some(node) = self.nodes.remove(&id) else { return };
        self.keys.remove(&(node.canonical_key, node.kind));
        for eid in self.incident.remove(&id).unwrap_or_default() {
            if let Some(edge) = self.edges.remove(&eid) {
                self.edge_keys.remove(&(edge.src, edge.dst, edge.kind));
                let other = if edge.src == id { edge.dst } else { edge.src };
                if let Some(set) = self.incident.get_mut(&other) {
                    set.remove(&eid);
                }
            }
        }
    }

    /// Canonical value for hashing: nodes by id, edges by `(src, dst, kind)`.
    /// Edge ids are omitted so the snapshot does not depend on insertion order.
    pub fn snapshot_value(&self) -> serde_json::Value {
        let mut edges: Vec<&RelationEdge> = self.edges.values().collect();
        edges.sort_by_key(|e| (e.src, e.dst, e.kind));
        let edges: Vec<EdgeSnapshot> = edges
            .into_iter()
            .map(|e| EdgeSnapshot {
                src: e.src,
                dst: e.dst,
                kind: e.kind,
                created_at: e.created_at,
                last_seen: e.last_seen,
                confidence: e.confidence,
            })
            .collect();
        serde_json::json!({
            "dimension": self.dimension,
            "nodes": self.nodes.values().collect::<Vec<_>>(),
            "edges": edges,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::HashEmbedder;

    fn emb(text: &str) -> Embedding<f64> {
        HashEmbedder.embed_text(text)
    }

    fn graph() -> MemoryGraph<f64> {
        MemoryGraph::new(64)
    }

    #[test]
    fn repeated_upsert_merges() {
        let mut g = graph();
        let a = g.upsert_node("Dolomites", NodeKind::Entity, emb("Dolomites"), 100, "s1").unwrap();
        let b = g.upsert_node("Dolomites", NodeKind::Entity, emb("Dolomites"), 100, "s1").unwrap();
        assert_eq!(a, b);
        assert_eq!(g.node(a).unwrap().mention_count, 2);
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn canonical_key_match_updates_last_seen() {
        let mut g = graph();
        let a = g.upsert_node("Dolomites", NodeKind::Entity, emb("Dolomites"), 100, "s1").unwrap();
        g.upsert_node("Dolomites", NodeKind::Entity, emb("Dolomites"), 100, "s1").unwrap();
        // Zero embedding rules out the similarity path; only the key can match.
        let b = g.upsert_node("dolomites ", NodeKind::Entity, Embedding::zeros(64), 200, "s2").unwrap();
        assert_eq!(a, b);
        let node = g.node(a).unwrap();
        assert_eq!(node.last_seen, 200);
        assert_eq!(node.created_at, 100);
        assert_eq!(node.label, "Dolomites");
        assert_eq!(node.session_ids.len(), 2);
    }

    #[test]
    fn kind_separates_nodes() {
        let mut g = graph();
        let a = g.upsert_node("hiking", NodeKind::Topic, emb("hiking"), 1, "s").unwrap();
        let b = g.upsert_node("hiking", NodeKind::Preference, emb("hiking"), 1, "s").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn upsert_validation() {
        let mut g = graph();
        assert_eq!(
            g.upsert_node("x", NodeKind::Entity, emb("x"), 0, "s"),
            Err(GraphError::NonPositiveTimestamp(0))
        );
        assert_eq!(g.upsert_node("  ", NodeKind::Entity, emb("x"), 5, "s"), Err(GraphError::EmptyLabel));
        let raw = Embedding::from_raw(vec![2.0; 64]);
        assert_eq!(g.upsert_node("x", NodeKind::Entity, raw, 5, "s"), Err(GraphError::NotNormalized));
        assert!(matches!(
            g.upsert_node("x", NodeKind::Entity, Embedding::zeros(3), 5, "s"),
            Err(GraphError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn edge_dedup_keeps_max_confidence() {
        let mut g = graph();
        let a = g.upsert_node("a", NodeKind::Entity, emb("alpha"), 1, "s").unwrap();
        let b = g.upsert_node("b", NodeKind::Entity, emb("bravo"), 1, "s").unwrap();
        let e1 = g.add_edge(a, b, EdgeKind::RelatesTo, 10, 0.8).unwrap();
        let e2 = g.add_edge(a, b, EdgeKind::RelatesTo, 20, 0.6).unwrap();
        assert_eq!(e1, e2);
        let e = g.edge_between(a, b, EdgeKind::RelatesTo).unwrap();
        assert_eq!((e.last_seen, e.confidence, e.created_at), (20, 0.8, 10));
        let e3 = g.add_edge(a, b, EdgeKind::Mentions, 10, 0.5).unwrap();
        assert_ne!(e1, e3);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn edge_errors() {
        let mut g = graph();
        let a = g.upsert_node("a", NodeKind::Entity, emb("alpha"), 1, "s").unwrap();
        assert_eq!(g.add_edge(a, a, EdgeKind::RelatesTo, 1, 0.5), Err(GraphError::SelfLoop(a)));
        assert_eq!(g.add_edge(a, 99, EdgeKind::RelatesTo, 1, 0.5), Err(GraphError::UnknownNode(99)));
        let b = g.upsert_node("b", NodeKind::Entity, emb("bravo"), 1, "s").unwrap();
        assert_eq!(g.add_edge(a, b, EdgeKind::About, 1, 1.5), Err(GraphError::InvalidConfidence(1.5)));
    }

    #[test]
    fn time_window_filters_on_last_seen() {
        let mut g = graph();
        for (i, ts) in [100, 200, 300].into_iter().enumerate() {
            g.upsert_node(&format!("n{i}"), NodeKind::Topic, emb(&format!("topic {i} words")), ts, "s")
                .unwrap();
        }
        let hits = g
            .query_nodes(&emb("topic"), 300, 10, Some(TimeWindow { from: 150, to: 250 }), &[])
            .unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(g.node(hits[0].node_id).unwrap().last_seen, 200);
    }

    #[test]
    fn self_query_on_fresh_seed_scores_one() {
        let mut g = graph();
        let e = emb("Canadian Rockies");
        let id = g.upsert_node("Canadian Rockies", NodeKind::Entity, e.clone(), 500, "s").unwrap();
        let hits = g.query_nodes(&e, 500, 1, None, &[id]).unwrap();
        let c = hits[0].components;
        assert!((c.semantic - 1.0).abs() < 1e-12);
        assert_eq!(c.recency, 1.0);
        assert_eq!(c.proximity, 1.0);
        assert!((hits[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_k_is_rejected() {
        let g = graph();
        assert_eq!(g.query_nodes(&emb("x"), 1, 0, None, &[]), Err(GraphError::ZeroK));
    }

    #[test]
    fn recency_decreases_and_skew_is_clamped() {
        let g = graph();
        assert_eq!(g.recency(1000, 1000), 1.0);
        assert_eq!(g.recency(900, 1000), 1.0);
        let mut prev = 1.0;
        for age in [1, 10, 1_000, DAY_MS, 30 * DAY_MS, 365 * DAY_MS] {
            let r = g.recency(age, 0);
            assert!(r < prev);
            prev = r;
        }
        assert!((g.recency(30 * DAY_MS, 0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    fn chain() -> (MemoryGraph<f64>, [NodeId; 3]) {
        let mut g = graph();
        let a = g.upsert_node("a", NodeKind::Entity, emb("alpha"), 1, "s").unwrap();
        let b = g.upsert_node("b", NodeKind::Entity, emb("bravo"), 1, "s").unwrap();
        let c = g.upsert_node("c", NodeKind::Entity, emb("charlie"), 1, "s").unwrap();
        g.add_edge(a, b, EdgeKind::RelatesTo, 1, 1.0).unwrap();
        g.add_edge(c, b, EdgeKind::RelatesTo, 1, 1.0).unwrap();
        (g, [a, b, c])
    }

    #[test]
    fn neighborhood_hops() {
        let (g, [a, b, c]) = chain();
        let zero = g.neighborhood(&[a, c], 0).unwrap();
        assert_eq!(zero.nodes.len(), 2);
        assert!(zero.edges.is_empty());
        let one = g.neighborhood(&[a], 1).unwrap();
        assert_eq!(one.nodes.iter().map(|n| n.id).collect::<Vec<_>>(), vec![a, b]);
        assert_eq!(one.edges.len(), 1);
        assert_eq!(g.neighborhood(&[a], 2).unwrap().nodes.len(), 3);
        assert_eq!(g.neighborhood(&[42], 1), Err(GraphError::UnknownNode(42)));
        assert_eq!(g.neighborhood(&[b], 0).unwrap().nodes[0].id, b);
    }

    #[test]
    fn proximity_follows_hops_and_cap() {
        let (mut g, [a, _b, c]) = chain();
        let d = g.upsert_node("d", NodeKind::Entity, emb("delta"), 1, "s").unwrap();
        let e = g.upsert_node("e", NodeKind::Entity, emb("echo"), 1, "s").unwrap();
        g.add_edge(c, d, EdgeKind::RelatesTo, 1, 1.0).unwrap();
        g.add_edge(d, e, EdgeKind::RelatesTo, 1, 1.0).unwrap();
        let hits = g.query_nodes(&emb("zzz"), 1, 10, None, &[a]).unwrap();
        let prox: HashMap<NodeId, f64> =
            hits.iter().map(|h| (h.node_id, h.components.proximity)).collect();
        assert_eq!(prox[&a], 1.0);
        assert_eq!(prox[&c], 1.0 / 3.0);
        assert_eq!(prox[&d], 0.25);
        // four hops away, beyond the cap
        assert_eq!(prox[&e], 0.0);
    }

    #[test]
    fn prune_removes_lowest_rank_and_dangling_edges() {
        let mut g = graph();
        let mut ids = Vec::new();
        for i in 0..12 {
            let ts = 1_000 + i * DAY_MS;
            ids.push(g.upsert_node(&format!("n{i}"), NodeKind::Topic, emb(&format!("node number {i}")), ts, "s").unwrap());
        }
        for w in ids.windows(2) {
            g.add_edge(w[0], w[1], EdgeKind::FollowsUp, 5, 1.0).unwrap();
        }
        let nz = |n| NonZeroUsize::new(n).unwrap();
        assert!(g.prune(nz(12)).is_empty());
        let removed = g.prune(nz(10));
        // the two oldest single-mention nodes rank lowest
        assert_eq!(removed, vec![ids[0], ids[1]]);
        assert_eq!(g.node_count(), 10);
        for e in g.edges() {
            assert!(g.contains(e.src) && g.contains(e.dst));
        }
        assert_eq!(g.edge_count(), 9);
        assert!(g.find("n0", NodeKind::Topic).is_none());
    }
}
