//! Answer-quality metrics and the scenario harness.

pub mod metrics;
pub mod scenario;

pub use metrics::{accuracy, is_correct, rouge_l, rouge_n, tokenize, RougeScores};
pub use scenario::{
    render_comparison, render_report, run_scenario, run_scenarios, EvalError, Scenario, ScenarioFile, ScenarioReport,
    ScenarioRun, Step, SuiteReport,
};

/// The scenario suite shipped with the crate.
pub const BUNDLED_SCENARIOS: &str = include_str!("../../fixtures/scenarios.json");
