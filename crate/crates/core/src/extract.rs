//! Concept extraction: the structured delta a turn contributes to the graph,
//! the deterministic capitalized-run fallback, and parsing of extractor output.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::memory_graph::{canonical_key, EdgeKind, NodeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaNode {
    pub label: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEdge {
    pub src_label: String,
    pub dst_label: String,
    pub kind: EdgeKind,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GraphDelta {
    pub nodes: Vec<DeltaNode>,
    pub edges: Vec<DeltaEdge>,
    pub turn_label: String,
}

const STOPWORDS: &[&str] = &[
    "i", "the", "a", "an", "in", "on", "at", "and", "or", "to", "of", "we", "you", "it", "my",
    "our", "this", "that", "can", "back",
];

pub const FALLBACK_CONFIDENCE: f64 = 0.5;

fn is_boundary(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Maximal runs of capitalized tokens in one sentence. Punctuation attached to
/// a token (a comma, a parenthesis) ends the run at that token.
fn capitalized_runs(sentence: &str) -> Vec<String> {
    let mut runs: Vec<Vec<&str>> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut first_token: Option<&str> = None;
    let mut first_run_is_initial = false;

    for raw in sentence.split_whitespace() {
        let word = raw.trim_matches(is_boundary);
        if word.is_empty() {
            if !current.is_empty() {
                runs.push(std::mem::take(&mut current));
            }
            continue;
        }
        let is_first = first_token.is_none();
        if is_first {
            first_token = Some(word);
        }
        if raw.starts_with(is_boundary) && !current.is_empty() {
            runs.push(std::mem::take(&mut current));
        }
        if word.chars().next().is_some_and(char::is_uppercase) {
            if is_first {
                first_run_is_initial = true;
            }
            current.push(word);
        } else if !current.is_empty() {
            runs.push(std::mem::take(&mut current));
        }
        if raw.ends_with(is_boundary) && !current.is_empty() {
            runs.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }

    runs.into_iter()
        .enumerate()
        .filter(|(i, run)| {
            let initial_only = *i == 0 && first_run_is_initial && run.len() == 1;
            !(initial_only && STOPWORDS.contains(&run[0].to_lowercase().as_str()))
        })
        .map(|(_, run)| run.join(" "))
        .collect()
}

/// Rule-based extraction used when the extractor model is unavailable or its
/// output cannot be parsed.
pub fn fallback_extract(text: &str) -> GraphDelta {
    let mut delta = GraphDelta { turn_label: text.trim().to_owned(), ..Default::default() };
    let mut seen = HashSet::new();
    for sentence in text.split(['.', '!', '?']) {
        let entities = capitalized_runs(sentence);
        for label in &entities {
            if seen.insert(canonical_key(label)) {
                delta.nodes.push(DeltaNode { label: label.clone(), kind: NodeKind::Entity });
            }
        }
        for pair in entities.windows(2) {
            if canonical_key(&pair[0]) != canonical_key(&pair[1]) {
                delta.edges.push(DeltaEdge {
                    src_label: pair[0].clone(),
                    dst_label: pair[1].clone(),
                    kind: EdgeKind::RelatesTo,
                    confidence: FALLBACK_CONFIDENCE,
                });
            }
        }
    }
    delta
}

/// Canonical keys of the entities the fallback rule finds in `text`.
pub fn concept_keys(text: &str) -> BTreeSet<String> {
    fallback_extract(text).nodes.iter().map(|n| canonical_key(&n.label)).collect()
}

/// Reads `{"entities":[{"label","kind"}],"relations":[{"src","dst","kind","confidence"}]}`.
/// Returns `None` when the value does not have that shape.
pub fn delta_from_payload(value: &serde_json::Value, text: &str) -> Option<GraphDelta> {
    let entities = value.get("entities")?.as_array()?;
    let mut delta = GraphDelta { turn_label: text.trim().to_owned(), ..Default::default() };
    let mut seen = HashSet::new();
    for e in entities {
        let label = e.get("label")?.as_str()?.trim();
        if label.is_empty() {
            continue;
        }
        let kind = match e.get("kind").and_then(|k| k.as_str()).and_then(NodeKind::parse) {
            Some(NodeKind::Turn) | None => NodeKind::Entity,
            Some(k) => k,
        };
        if seen.insert((canonical_key(label), kind)) {
            delta.nodes.push(DeltaNode { label: label.to_owned(), kind });
        }
    }
    let relations = match value.get("relations") {
        None | Some(serde_json::Value::Null) => &[][..],
        Some(r) => r.as_array()?.as_slice(),
    };
    for r in relations {
        let src = r.get("src")?.as_str()?.trim();
        let dst = r.get("dst")?.as_str()?.trim();
        let kind = r
            .get("kind")
            .and_then(|k| k.as_str())
            .and_then(EdgeKind::parse)
            .unwrap_or(EdgeKind::RelatesTo);
        let confidence = r
            .get("confidence")
            .and_then(|c| c.as_f64())
            .filter(|c| c.is_finite())
            .unwrap_or(FALLBACK_CONFIDENCE)
            .clamp(0.0, 1.0);
        delta.edges.push(DeltaEdge {
            src_label: src.to_owned(),
            dst_label: dst.to_owned(),
            kind,
            confidence,
        });
    }
    Some(delta)
}
