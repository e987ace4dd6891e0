//! Scenario file handling and harness behaviour beyond the bundled suite.

use chronomem::eval::{
    render_report, rouge_l, run_scenario, run_scenarios, EvalError, RougeScores, ScenarioFile, BUNDLED_SCENARIOS,
};
use chronomem::EngineConfig;
use proptest::prelude::*;

#[test]
fn schema_errors_carry_line_numbers() {
    let text = "{\n  \"scenarios\": [\n    {\"name\": \"x\", \"steps\": [\n      {\"kind\": \"dance\"}\n    ]}\n  ]\n}";
    match ScenarioFile::parse(text) {
        Err(EvalError::Schema { line, .. }) => assert_eq!(line, 4),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn empty_and_queryless_files_rejected() {
    assert!(matches!(ScenarioFile::parse(r#"{"scenarios": []}"#), Err(EvalError::Empty)));
    let text = r#"{"scenarios": [{"name": "q", "steps": [{"kind": "user_turn", "text": "hi"}]}]}"#;
    assert!(matches!(ScenarioFile::parse(text), Err(EvalError::Invalid { .. })));
}

#[test]
fn clock_must_not_run_backwards() {
    let text = r#"{"scenarios": [{"name": "t", "start_ts": 1000, "steps": [
        {"kind": "advance_clock", "ts": 5000},
        {"kind": "query", "text": "hi", "ts": 4000, "required_phrases": ["x"]}]}]}"#;
    match ScenarioFile::parse(text) {
        Err(EvalError::Invalid { step, .. }) => assert_eq!(step, 1),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_script_lines_rejected() {
    let text = r#"{"scenarios": [{"name": "t", "steps": [
        {"kind": "assistant_script", "script": [{"role": "critic", "error": "gremlins"}]},
        {"kind": "query", "text": "hi", "required_phrases": ["x"]}]}]}"#;
    assert!(matches!(ScenarioFile::parse(text), Err(EvalError::Invalid { step: 0, .. })));
}

#[test]
fn harness_is_deterministic() {
    let file = ScenarioFile::parse(BUNDLED_SCENARIOS).unwrap();
    let a = run_scenarios(&file, &EngineConfig::default(), "mock").unwrap();
    let b = run_scenarios(&file, &EngineConfig::default(), "mock").unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let table = render_report(&a);
    assert_eq!(table.lines().count(), 6);
    assert!(table.lines().last().unwrap().starts_with("overall"));
}

#[test]
fn missing_llm_script_counts_as_wrong_answer() {
    let text = r#"{"scenarios": [{"name": "silent", "steps": [
        {"kind": "user_turn", "text": "We booked Lake Louise."},
        {"kind": "query", "text": "Where did we book?", "expected_reference": "Lake Louise", "required_phrases": ["Lake Louise"]}]}]}"#;
    let file = ScenarioFile::parse(text).unwrap();
    let run = run_scenario(&file.scenarios[0], &EngineConfig::default()).unwrap();
    let q = &run.report.queries[0];
    assert!(!q.correct);
    assert!(q.error.is_some());
    assert_eq!(run.report.summary.accuracy, 0.0);
}

#[test]
fn ingested_documents_reach_the_context() {
    let file = ScenarioFile::parse(BUNDLED_SCENARIOS).unwrap();
    let car = file.scenarios.iter().find(|s| s.name == "hybrid-car").unwrap();
    let run = run_scenario(car, &EngineConfig::default()).unwrap();
    assert!(run.report.queries[0].chunk_count > 0);
}

/// Longest common subsequence by exhaustive search over subsequences of the
/// shorter side; only usable on tiny inputs.
fn lcs_exhaustive(a: &[&str], b: &[&str]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subseq = |sub: &[&str]| {
        let mut it = long.iter();
        sub.iter().all(|w| it.any(|x| x == w))
    };
    (0u32..1 << short.len())
        .filter_map(|mask| {
            let sub: Vec<&str> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| short[i]).collect();
            is_subseq(&sub).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

proptest! {
    #[test]
    fn rouge_l_matches_exhaustive_lcs(
        a in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..9),
        b in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..9),
    ) {
        let lcs = lcs_exhaustive(&a, &b);
        let s: RougeScores<f64> = rouge_l(&a.join(" "), &b.join(" "));
        let recall = if a.is_empty() { 0.0 } else { lcs as f64 / a.len() as f64 };
        let precision = if b.is_empty() { 0.0 } else { lcs as f64 / b.len() as f64 };
        prop_assert!((s.recall - recall).abs() < 1e-12);
        prop_assert!((s.precision - precision).abs() < 1e-12);
    }
}

#[test]
fn bundled_suite_matches_published_schema() {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../../../docs/scenario.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let suite: serde_json::Value = serde_json::from_str(BUNDLED_SCENARIOS).unwrap();
    let errors: Vec<String> = validator.iter_errors(&suite).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let mut broken = suite.clone();
    broken["scenarios"][0]["steps"][0]["colour"] = serde_json::json!("red");
    assert!(!validator.is_valid(&broken));
    assert!(ScenarioFile::parse(&broken.to_string()).is_err());
}
