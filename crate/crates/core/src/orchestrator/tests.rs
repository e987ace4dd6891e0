use super::*;
use crate::embedder::HashEmbedder;
use crate::llm::{BackendError, RetryPolicy, ScriptStep, ScriptedBackend};
use std::time::Duration;

const T0: Timestamp = 1_714_000_000_000;

fn engine_with(config: EngineConfig) -> (Engine, Arc<ScriptedBackend>) {
    let mock = Arc::new(ScriptedBackend::new());
    let gateway = Gateway::uniform(mock.clone())
        .with_retry(RetryPolicy { max_retries: 2, base_backoff: Duration::ZERO });
    let engine = Engine::new(config, gateway, Arc::new(HashEmbedder), EventLog::in_memory()).unwrap();
    engine.ensure_session("s", T0);
    (engine, mock)
}

fn engine() -> (Engine, Arc<ScriptedBackend>) {
    engine_with(EngineConfig::default())
}

fn kinds(engine: &Engine) -> Vec<EventKind> {
    engine.events_since(0).iter().map(|e| e.kind).collect()
}

#[test]
fn turn_with_scripted_extraction() {
    let (engine, mock) = engine();
    mock.respond(
        LlmRole::Extractor,
        r#"{"entities":[{"label":"hiking","kind":"Preference"},{"label":"Dolomites","kind":"Entity"}],
            "relations":[{"src":"Dolomites","dst":"hiking","kind":"RELATES_TO","confidence":0.7}]}"#,
    );
    let out = engine.record_turn("s", Speaker::User, "I like hiking in the Dolomites", T0).unwrap();
    assert!(!out.used_fallback);
    assert_eq!(out.node_ids.len(), 2);
    engine.with_stores(|g, _| {
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.node(out.turn_node_id).unwrap().kind, NodeKind::Turn);
        let dolo = g.find("Dolomites", NodeKind::Entity).unwrap();
        let hiking = g.find("hiking", NodeKind::Preference).unwrap();
        assert_eq!(g.edge_between(dolo, hiking, EdgeKind::RelatesTo).unwrap().confidence, 0.7);
        assert!(g.edge_between(out.turn_node_id, dolo, EdgeKind::Mentions).is_some());
    });
    assert_eq!(kinds(&engine).last(), Some(&EventKind::TurnRecorded));
}

#[test]
fn extractor_failure_falls_back_and_is_logged() {
    let (engine, mock) = engine();
    mock.push(LlmRole::Extractor, ScriptStep::Fail(BackendError::Status(500)));
    let out = engine.record_turn("s", Speaker::User, "We drove the Toyota Prius to Lake Garda.", T0).unwrap();
    assert!(out.used_fallback);
    let labels: Vec<_> = out.delta.nodes.iter().map(|n| n.label.as_str()).collect();
    assert_eq!(labels, ["Toyota Prius", "Lake Garda"]);
    let k = kinds(&engine);
    assert_eq!(k[0], EventKind::LlmError);
    assert_eq!(k[1], EventKind::FallbackExtract);

    // Unparseable output takes the same path without an llm_error.
    mock.respond(LlmRole::Extractor, "sorry, I cannot help");
    engine.record_turn("s", Speaker::User, "Later we saw Verona.", T0 + 1).unwrap();
    let k = kinds(&engine);
    let tail = &k[k.len() - 1 - k.iter().rev().position(|x| *x == EventKind::FallbackExtract).unwrap()..];
    assert!(!tail.contains(&EventKind::LlmError));
}

#[test]
fn consecutive_turns_are_linked() {
    let (engine, _) = engine();
    let a = engine.record_turn("s", Speaker::User, "first message", T0).unwrap();
    let b = engine.record_turn("s", Speaker::Assistant, "second message", T0 + 5).unwrap();
    engine.with_stores(|g, _| {
        assert!(g.edge_between(b.turn_node_id, a.turn_node_id, EdgeKind::FollowsUp).is_some());
    });
    // Repeating a turn verbatim merges into the same node; no self loop.
    let c = engine.record_turn("s", Speaker::User, "second message", T0 + 9).unwrap();
    assert_eq!(c.turn_node_id, b.turn_node_id);
    assert_eq!(engine.session("s").unwrap().turn_count, 3);
}

#[test]
fn input_validation() {
    let (engine, _) = engine();
    assert!(matches!(engine.record_turn("nope", Speaker::User, "hi", T0), Err(EngineError::UnknownSession(_))));
    assert!(matches!(engine.record_turn("s", Speaker::User, "  ", T0), Err(EngineError::EmptyText)));
    assert!(matches!(engine.record_turn("s", Speaker::User, "hi", 0), Err(EngineError::InvalidTimestamp(0))));
    assert!(matches!(engine.answer("s", "", T0), Err(EngineError::EmptyText)));
}

#[test]
fn critic_feedback_reaches_next_prompt() {
    let (engine, mock) = engine();
    mock.respond(LlmRole::Answerer, "draft");
    mock.respond(LlmRole::Critic, r#"{"score":0.3,"missing":["the dates"]}"#);
    mock.respond(LlmRole::Answerer, "better");
    mock.respond(LlmRole::Critic, r#"```json
{"score": 0.95, "missing": []}
```"#);
    let bundle = engine.answer("s", "When do we leave?", T0).unwrap();
    assert_eq!(bundle.answer, "better");
    assert_eq!(bundle.iterations_used, 2);
    assert!(bundle.accepted);
    assert_eq!(bundle.selected_iteration, 1);
    let answerer_prompts: Vec<String> = mock
        .calls()
        .into_iter()
        .filter(|c| c.role == LlmRole::Answerer)
        .map(|c| c.request.messages.last().unwrap().content.clone())
        .collect();
    assert!(!answerer_prompts[0].contains("the dates"));
    assert!(answerer_prompts[1].contains("the dates"));
}

#[test]
fn unusable_critic_scores_zero() {
    let (engine, mock) = engine_with(EngineConfig {
        reflection: crate::config::ReflectionConfig { threshold: 0.8, max_iterations: 2 },
        ..EngineConfig::default()
    });
    mock.respond(LlmRole::Answerer, "one");
    mock.respond(LlmRole::Critic, "looks fine to me");
    mock.respond(LlmRole::Answerer, "two");
    mock.push(LlmRole::Critic, ScriptStep::Fail(BackendError::Status(503)));
    let bundle = engine.answer("s", "question", T0).unwrap();
    assert_eq!(bundle.iterations_used, 2);
    assert!(!bundle.accepted);
    assert_eq!(bundle.final_score, 0.0);
    // Ties keep the earlier attempt.
    assert_eq!(bundle.answer, "one");
    assert_eq!(bundle.missing, ["critic-unparseable"]);
}

#[test]
fn answerer_down_everywhere_is_an_error() {
    let (engine, mock) = engine();
    for _ in 0..9 {
        mock.push(LlmRole::Answerer, ScriptStep::Fail(BackendError::Transport("refused".into())));
    }
    let err = engine.answer("s", "anyone there?", T0).unwrap_err();
    assert!(matches!(err, EngineError::LlmExhausted { last: LlmError::TransportExhausted { .. } }), "{err:?}");
    // 3 iterations, each with the original call and 2 retries.
    assert_eq!(mock.calls().iter().filter(|c| c.role == LlmRole::Answerer).count(), 9);
    assert!(!kinds(&engine).contains(&EventKind::AnswerGenerated));
}

#[test]
fn partial_answerer_failure_still_answers() {
    let (engine, mock) = engine();
    mock.push(LlmRole::Answerer, ScriptStep::Fail(BackendError::Status(429)));
    mock.respond(LlmRole::Answerer, "recovered");
    mock.respond(LlmRole::Critic, r#"{"score":0.9,"missing":[]}"#);
    let bundle = engine.answer("s", "question", T0).unwrap();
    assert_eq!(bundle.answer, "recovered");
    assert_eq!(bundle.iterations_used, 2);
    assert_eq!(bundle.selected_iteration, 1);
}

#[test]
fn ingest_replaces_previous_version() {
    let (engine, _) = engine();
    let first = engine.ingest_document("notes.txt", &"Trails near Cortina. ".repeat(60), T0).unwrap();
    assert!(first.chunk_count > 1);
    assert!(first.concept_keys_attached.contains("cortina"));
    let second = engine.ingest_document("notes.txt", "Short version about Cortina.", T0 + 1).unwrap();
    assert_eq!(second.chunk_count, 1);
    engine.with_stores(|_, index| assert_eq!(index.len(), 1));
    assert!(kinds(&engine).contains(&EventKind::DocRemoved));
    assert!(matches!(engine.ingest_document("notes.txt", "", T0 + 2), Err(EngineError::Ingest(_))));
    engine.with_stores(|_, index| assert_eq!(index.len(), 1));
}

#[test]
fn chunks_are_filtered_by_context_concepts() {
    let (engine, mock) = engine();
    engine.ingest_document("a.txt", "Cortina has lovely trails.", T0).unwrap();
    engine.ingest_document("b.txt", "Banff has lovely trails.", T0).unwrap();
    mock.respond(LlmRole::Extractor, r#"{"entities":[{"label":"Banff","kind":"Entity"}]}"#);
    engine.record_turn("s", Speaker::User, "I want to visit Banff", T0 + 1).unwrap();
    let ctx = engine.retrieve_context("s", "lovely trails", T0 + 2, 0).unwrap();
    assert_eq!(ctx.chunks.len(), 1);
    assert_eq!(ctx.chunks[0].doc_name, "b.txt");
}

#[test]
fn unfiltered_search_when_no_concept_matches() {
    let (engine, _) = engine();
    engine.ingest_document("a.txt", "Cortina has lovely trails.", T0).unwrap();
    let ctx = engine.retrieve_context("s", "trails", T0 + 2, 0).unwrap();
    assert_eq!(ctx.chunks.len(), 1);
}

#[test]
fn widening_schedule() {
    let (engine, _) = engine();
    let words = ["alpine", "basalt", "cobalt", "dune", "ember", "fjord", "glacier", "harbor", "iris", "juniper"];
    for (i, w) in words.iter().enumerate() {
        for (j, v) in words.iter().enumerate().skip(i + 1).take(3) {
            engine.record_turn("s", Speaker::User, &format!("{w} {v} {}", i * 10 + j), T0 + (i * 10 + j) as i64).unwrap();
        }
    }
    let sizes: Vec<usize> =
        (0..3).map(|i| engine.retrieve_context("s", "topic", T0 + 100, i).unwrap().scored_nodes.len()).collect();
    assert_eq!(sizes, [5, 10, 20]);
}

#[test]
fn sessions_survive_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let config = EngineConfig { log_path: Some(path.clone()), ..EngineConfig::default() };
    let hash = {
        let engine = Engine::from_config(config.clone()).unwrap();
        engine.ensure_session("s", T0);
        engine.record_turn("s", Speaker::User, "Remember the Dolomites", T0).unwrap();
        engine.record_turn("s", Speaker::Assistant, "Noted", T0 + 1).unwrap();
        engine.state_hash()
    };
    let engine = Engine::from_config(config).unwrap();
    assert_eq!(engine.state_hash(), hash);
    let turns = engine.session_turns("s").unwrap();
    assert_eq!(turns.len(), 2);
    assert_eq!(turns[1].speaker, Speaker::Assistant);
    let next = engine.record_turn("s", Speaker::User, "And the Alps", T0 + 2).unwrap();
    engine.with_stores(|g, _| assert!(g.edge_between(next.turn_node_id, turns[1].node_id, EdgeKind::FollowsUp).is_some()));
}

#[test]
fn configured_prune_is_logged_and_replayable() {
    let (engine, _) = engine_with(EngineConfig {
        prune: crate::config::PruneConfig { max_nodes: Some(4) },
        ..EngineConfig::default()
    });
    for i in 0..6 {
        engine.record_turn("s", Speaker::User, &format!("Visit Place{i} soon"), T0 + i * 1000).unwrap();
    }
    engine.with_stores(|g, _| assert!(g.node_count() <= 4));
    assert!(kinds(&engine).contains(&EventKind::GraphPruned));
    let verified = persistence::verify_log(&engine.sealed_log(), 64, &engine.config().weights).unwrap();
    assert_eq!(verified.state_hash, engine.state_hash());
}

#[test]
fn critique_parsing() {
    assert_eq!(Critique::parse(r#"{"score": 1.7}"#).unwrap().score, 1.0);
    assert_eq!(Critique::parse(r#"Here: {"score": 0.4, "missing": ["x"]}"#).unwrap().missing, ["x"]);
    assert!(Critique::parse(r#"{"missing": []}"#).is_none());
    assert!(Critique::parse("0.9").is_none());
}

#[test]
fn session_ids_are_unique() {
    let (engine, _) = engine();
    let a = engine.create_session(None, T0);
    let b = engine.create_session(None, T0);
    assert_ne!(a.session_id, b.session_id);
    assert_eq!(a.session_id.len(), 36);
}
