//! Scripted multi-turn scenarios and the runner that scores them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{is_correct, rouge_l, rouge_n, RougeScores};
use crate::config::EngineConfig;
use crate::llm::ScriptLine;
use crate::memory_graph::{NodeId, NodeKind, ScoreComponents};
use crate::orchestrator::{Engine, EngineError, Speaker};
use crate::persistence::EventLog;
use crate::Timestamp;

/// 2023-11-14T22:13:20Z, used when a scenario sets no start time.
pub const DEFAULT_START_TS: Timestamp = 1_700_000_000_000;
pub const SESSION_ID: &str = "scenario";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario file line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
    #[error("scenario file has no scenarios")]
    Empty,
    #[error("scenario {scenario:?}, step {step}: {message}")]
    Invalid { scenario: String, step: usize, message: String },
    #[error("scenario {scenario:?}, step {step}: {source}")]
    Engine { scenario: String, step: usize, source: EngineError },
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    UserTurn {
        text: String,
        #[serde(default)]
        ts: Option<Timestamp>,
    },
    /// Queues mock responses and optionally records an assistant turn.
    AssistantScript {
        #[serde(default)]
        script: Vec<ScriptLine>,
        #[serde(default)]
        text: Option<String>,
        #[serde(default)]
        ts: Option<Timestamp>,
    },
    AdvanceClock {
        ts: Timestamp,
    },
    IngestDoc {
        name: String,
        text: String,
        #[serde(default)]
        ts: Option<Timestamp>,
    },
    Query {
        text: String,
        #[serde(default)]
        ts: Option<Timestamp>,
        #[serde(default)]
        expected_reference: String,
        required_phrases: Vec<String>,
    },
}

impl Step {
    pub fn ts(&self) -> Option<Timestamp> {
        match self {
            Step::UserTurn { ts, .. }
            | Step::AssistantScript { ts, .. }
            | Step::IngestDoc { ts, .. }
            | Step::Query { ts, .. } => *ts,
            Step::AdvanceClock { ts } => Some(*ts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default = "default_start")]
    pub start_ts: Timestamp,
    pub steps: Vec<Step>,
}

fn default_start() -> Timestamp {
    DEFAULT_START_TS
}

impl Scenario {
    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |step: usize, message: &str| EvalError::Invalid {
            scenario: self.name.clone(),
            step,
            message: message.to_owned(),
        };
        if self.start_ts <= 0 {
            return Err(invalid(0, "start_ts must be positive"));
        }
        let mut clock = self.start_ts;
        for (i, step) in self.steps.iter().enumerate() {
            if let Some(ts) = step.ts() {
                if ts < clock {
                    return Err(invalid(i, &format!("ts {ts} goes backwards from {clock}")));
                }
                clock = ts;
            }
            match step {
                Step::AssistantScript { script, .. } => {
                    if let Some(msg) = script.iter().find_map(|l| l.step().err()) {
                        return Err(invalid(i, &msg));
                    }
                }
                Step::Query { required_phrases, .. } if required_phrases.is_empty() => {
                    return Err(invalid(i, "query needs at least one required phrase"));
                }
                _ => {}
            }
        }
        if !self.steps.iter().any(|s| matches!(s, Step::Query { .. })) {
            return Err(invalid(self.steps.len(), "scenario has no query steps"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenarios: Vec<Scenario>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let file: Self = serde_json::from_str(text).map_err(|e| EvalError::Schema {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.scenarios.is_empty() {
            return Err(EvalError::Empty);
        }
        for s in &file.scenarios {
            s.validate()?;
        }
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextNodeReport {
    pub node_id: NodeId,
    pub label: String,
    pub kind: NodeKind,
    pub last_seen: Timestamp,
    pub score: f64,
    pub components: ScoreComponents<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub step: usize,
    pub query: String,
    pub ts: Timestamp,
    pub answer: String,
    pub expected_reference: String,
    pub required_phrases: Vec<String>,
    pub correct: bool,
    pub rouge_1: RougeScores<f64>,
    pub rouge_2: RougeScores<f64>,
    pub rouge_l: RougeScores<f64>,
    pub iterations_used: usize,
    pub final_score: f64,
    pub accepted: bool,
    /// Scored nodes of the context the answer was drawn from.
    pub context_nodes: Vec<ContextNodeReport>,
    /// Labels of every node in that context's subgraph.
    pub context_labels: Vec<String>,
    pub chunk_count: usize,
    /// Set when no answer could be produced.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub query_count: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub rouge_1_f1: f64,
    pub rouge_2_f1: f64,
    pub rouge_l_f1: f64,
    pub mean_iterations: f64,
}

impl Summary {
    fn of<'a>(queries: impl IntoIterator<Item = &'a QueryReport>) -> Self {
        let mut s = Self::default();
        for q in queries {
            s.query_count += 1;
            s.correct += usize::from(q.correct);
            s.rouge_1_f1 += q.rouge_1.f1;
            s.rouge_2_f1 += q.rouge_2.f1;
            s.rouge_l_f1 += q.rouge_l.f1;
            s.mean_iterations += q.iterations_used as f64;
        }
        if s.query_count > 0 {
            let n = s.query_count as f64;
            s.accuracy = s.correct as f64 / n;
            s.rouge_1_f1 /= n;
            s.rouge_2_f1 /= n;
            s.rouge_l_f1 /= n;
            s.mean_iterations /= n;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub queries: Vec<QueryReport>,
    pub summary: Summary,
    pub event_count: u64,
    pub state_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    /// Row label in the comparison table, usually the backend setup.
    pub label: String,
    pub scenarios: Vec<ScenarioReport>,
    pub summary: Summary,
}

/// A finished scenario together with the engine it ran on, for inspection.
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub engine: Engine,
}

/// Runs one scenario on a fresh engine. Roles without an endpoint in `base`
/// are served by the scripted mock fed from `assistant_script` steps.
pub fn run_scenario(scenario: &Scenario, base: &EngineConfig) -> Result<ScenarioRun, EvalError> {
    scenario.validate()?;
    let mut config = base.clone();
    config.log_path = None;
    config.mock_script = None;
    let (gateway, mock) = config.build_gateway()?;
    let embedder = config.build_embedder();
    let engine_err = |step: usize| {
        let scenario = scenario.name.clone();
        move |source: EngineError| EvalError::Engine { scenario, step, source }
    };
    let engine = Engine::new(config, gateway, embedder, EventLog::in_memory()).map_err(engine_err(0))?;
    engine.ensure_session(SESSION_ID, scenario.start_ts);

    let mut clock = scenario.start_ts;
    let mut queries = Vec::new();
    for (i, step) in scenario.steps.iter().enumerate() {
        if let Some(ts) = step.ts() {
            clock = ts;
        }
        match step {
            Step::UserTurn { text, .. } => {
                engine.record_turn(SESSION_ID, Speaker::User, text, clock).map_err(engine_err(i))?;
            }
            Step::AssistantScript { script, text, .. } => {
                for line in script {
                    mock.push_line(line).map_err(|message| EvalError::Invalid {
                        scenario: scenario.name.clone(),
                        step: i,
                        message,
                    })?;
                }
                if let Some(text) = text {
                    engine.record_turn(SESSION_ID, Speaker::Assistant, text, clock).map_err(engine_err(i))?;
                }
            }
            Step::AdvanceClock { .. } => {}
            Step::IngestDoc { name, text, .. } => {
                engine.ingest_document(name, text, clock).map_err(engine_err(i))?;
            }
            Step::Query { text, expected_reference, required_phrases, .. } => {
                let report = match engine.answer(SESSION_ID, text, clock) {
                    Ok(bundle) => {
                        // Node fields as they were at retrieval time, before the
                        // answer turn touched them.
                        let context_nodes = bundle
                            .context
                            .scored_nodes
                            .iter()
                            .filter_map(|s| {
                                let n = bundle.context.subgraph.nodes.iter().find(|n| n.id == s.node_id)?;
                                Some(ContextNodeReport {
                                    node_id: s.node_id,
                                    label: n.label.clone(),
                                    kind: n.kind,
                                    last_seen: n.last_seen,
                                    score: s.score,
                                    components: s.components,
                                })
                            })
                            .collect();
                        score_query(i, text, clock, expected_reference, required_phrases, &bundle.answer, |q| {
                            q.iterations_used = bundle.iterations_used;
                            q.final_score = bundle.final_score;
                            q.accepted = bundle.accepted;
                            q.context_nodes = context_nodes;
                            q.context_labels = bundle.context.subgraph.nodes.iter().map(|n| n.label.clone()).collect();
                            q.chunk_count = bundle.context.chunks.len();
                        })
                    }
                    Err(EngineError::LlmExhausted { last }) => {
                        score_query(i, text, clock, expected_reference, required_phrases, "", |q| {
                            q.iterations_used = engine.config().reflection.max_iterations;
                            q.error = Some(last.to_string());
                        })
                    }
                    Err(e) => return Err(engine_err(i)(e)),
                };
                queries.push(report);
            }
        }
    }
    let report = ScenarioReport {
        name: scenario.name.clone(),
        summary: Summary::of(&queries),
        queries,
        event_count: engine.last_seq(),
        state_hash: engine.state_hash(),
    };
    Ok(ScenarioRun { report, engine })
}

fn score_query(
    step: usize,
    query: &str,
    ts: Timestamp,
    reference: &str,
    required: &[String],
    answer: &str,
    fill: impl FnOnce(&mut QueryReport),
) -> QueryReport {
    let mut q = QueryReport {
        step,
        query: query.to_owned(),
        ts,
        answer: answer.to_owned(),
        expected_reference: reference.to_owned(),
        required_phrases: required.to_vec(),
        correct: is_correct(answer, required),
        rouge_1: rouge_n(reference, answer, 1),
        rouge_2: rouge_n(reference, answer, 2),
        rouge_l: rouge_l(reference, answer),
        iterations_used: 0,
        final_score: 0.0,
        accepted: false,
        context_nodes: Vec::new(),
        context_labels: Vec::new(),
        chunk_count: 0,
        error: None,
    };
    fill(&mut q);
    q
}

/// Runs every scenario, each on its own engine and thread.
pub fn run_scenarios(file: &ScenarioFile, base: &EngineConfig, label: &str) -> Result<SuiteReport, EvalError> {
    if file.scenarios.is_empty() {
        return Err(EvalError::Empty);
    }
    let results: Vec<Result<ScenarioReport, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = file
            .scenarios
            .iter()
            .map(|s| scope.spawn(move || run_scenario(s, base).map(|run| run.report)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
    });
    let scenarios = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = Summary::of(scenarios.iter().flat_map(|s| &s.queries));
    Ok(SuiteReport { label: label.to_owned(), scenarios, summary })
}

pub const TABLE_FOOTNOTE: &str = "ROUGE columns are F1 (beta = 1) on lowercased alphanumeric tokens, averaged over query steps. \
Accuracy is the share of query steps whose answer contains every required phrase, ignoring case.";

/// Per-scenario breakdown followed by the overall row.
pub fn render_report(report: &SuiteReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>7} {:>8} {:>8} {:>8} {:>9} {:>10}",
        "scenario", "queries", "ROUGE-1", "ROUGE-2", "ROUGE-L", "accuracy", "iterations"
    );
    let row = |out: &mut String, name: &str, s: &Summary| {
        let _ = writeln!(
            out,
            "{:<28} {:>7} {:>8.3} {:>8.3} {:>8.3} {:>9.3} {:>10.2}",
            name, s.query_count, s.rouge_1_f1, s.rouge_2_f1, s.rouge_l_f1, s.accuracy, s.mean_iterations
        );
    };
    for s in &report.scenarios {
        row(&mut out, &s.name, &s.summary);
    }
    row(&mut out, "overall", &report.summary);
    out
}

/// One row per backend setup, in the layout of a model comparison table.
pub fn render_comparison(reports: &[SuiteReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<32} {:>8} {:>8} {:>8} {:>9}", "model", "ROUGE-1", "ROUGE-2", "ROUGE-L", "accuracy");
    for r in reports {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{:<32} {:>8.1} {:>8.1} {:>8.1} {:>8.0}%",
            r.label,
            s.rouge_1_f1 * 100.0,
            s.rouge_2_f1 * 100.0,
            s.rouge_l_f1 * 100.0,
            s.accuracy * 100.0
        );
    }
    let _ = writeln!(out, "\n{TABLE_FOOTNOTE}");
    out
}
