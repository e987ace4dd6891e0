use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chronomem::eval::{render_comparison, render_report, run_scenarios, ScenarioFile, BUNDLED_SCENARIOS};
use chronomem::persistence::{self, parse_log, verify_log};
use chronomem::{AnswerBundle, Engine, EngineConfig, Timestamp};
use chronomem_server::now_ms;
use serde::Serialize;
use serde_json::json;

use crate::args::Format;
use crate::error::CliError;
use crate::target::Target;

pub struct Output<'a> {
    pub format: Format,
    pub out: &'a mut dyn Write,
}

impl Output<'_> {
    fn json(&mut self, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("output serializes");
        self.line(&text)
    }

    fn line(&mut self, text: &str) -> Result<(), CliError> {
        writeln!(self.out, "{text}").map_err(CliError::io("stdout"))
    }

    fn text(&mut self, text: &str) -> Result<(), CliError> {
        write!(self.out, "{text}").map_err(CliError::io("stdout"))
    }
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum Exchange {
    Answered {
        query: String,
        ts: Timestamp,
        answer: String,
        iterations_used: usize,
        final_score: f64,
        accepted: bool,
    },
    Failed {
        query: String,
        ts: Timestamp,
        error: String,
    },
}

fn exchange(query: &str, ts: Timestamp, bundle: &AnswerBundle) -> Exchange {
    Exchange::Answered {
        query: query.to_owned(),
        ts,
        answer: bundle.answer.clone(),
        iterations_used: bundle.iterations_used,
        final_score: bundle.final_score,
        accepted: bundle.accepted,
    }
}

pub fn chat(
    target: &Target,
    session: &str,
    at: Option<Timestamp>,
    input: &mut dyn BufRead,
    interactive: bool,
    out: &mut Output<'_>,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let mut pinned = at;
    target.ensure_session(session, pinned.unwrap_or_else(now_ms))?;
    let mut exchanges = Vec::new();
    let mut failures = 0;
    let mut line = String::new();
    loop {
        if interactive && out.format == Format::Text {
            out.text("you> ")?;
            out.out.flush().map_err(CliError::io("stdout"))?;
        }
        line.clear();
        if input.read_line(&mut line).map_err(CliError::io("stdin"))? == 0 {
            break;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "/quit" {
            break;
        }
        if let Some(arg) = text.strip_prefix("/at") {
            match arg.trim().parse::<Timestamp>() {
                Ok(ts) if ts > 0 => pinned = Some(ts),
                _ => {
                    let _ = writeln!(err, "error: /at expects a positive millisecond timestamp");
                }
            }
            continue;
        }
        let ts = pinned.unwrap_or_else(now_ms);
        if !interactive && out.format == Format::Text {
            out.line(&format!("you> {text}"))?;
        }
        match target.answer(session, text, ts) {
            Ok(bundle) => {
                if out.format == Format::Text {
                    out.line(&format!("assistant> {}", bundle.answer))?;
                    out.line(&format!(
                        "  (iterations {}, score {:.2}, {})",
                        bundle.iterations_used,
                        bundle.final_score,
                        if bundle.accepted { "accepted" } else { "best of cap" }
                    ))?;
                }
                exchanges.push(exchange(text, ts, &bundle));
            }
            Err(e) => {
                failures += 1;
                let _ = writeln!(err, "error: {e}");
                exchanges.push(Exchange::Failed { query: text.to_owned(), ts, error: e.to_string() });
            }
        }
    }
    target.finish()?;
    if out.format == Format::Json {
        out.json(&json!({"session_id": session, "exchanges": exchanges}))?;
    }
    match failures {
        0 => Ok(()),
        n => Err(CliError::Partial(n, exchanges.len())),
    }
}

pub fn ingest(target: &Target, paths: &[PathBuf], at: Option<Timestamp>, out: &mut Output<'_>) -> Result<(), CliError> {
    let docs = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
            let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            Ok((name, text))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut reports = Vec::new();
    for (name, text) in &docs {
        let report = target.ingest(name, text, at.unwrap_or_else(now_ms))?;
        if out.format == Format::Text {
            let keys: Vec<&str> = report.concept_keys_attached.iter().map(String::as_str).collect();
            out.line(&format!(
                "{}: {} chunks, concepts [{}], {} ms",
                report.doc_name,
                report.chunk_count,
                keys.join(", "),
                report.elapsed_ms
            ))?;
        }
        reports.push(report);
    }
    target.finish()?;
    if out.format == Format::Json {
        out.json(&reports)?;
    }
    Ok(())
}

fn default_label(config: &EngineConfig) -> String {
    let roles = [&config.roles.extractor, &config.roles.answerer, &config.roles.critic];
    if roles.iter().all(|r| r.endpoint.is_none()) {
        "scripted mock".to_owned()
    } else {
        roles.iter().map(|r| r.settings.model.as_str()).collect::<Vec<_>>().join(" / ")
    }
}

pub fn eval(
    config: &EngineConfig,
    scenarios: Option<&Path>,
    label: Option<&str>,
    out: &mut Output<'_>,
) -> Result<(), CliError> {
    let file = match scenarios {
        Some(path) => ScenarioFile::load(path)?,
        None => ScenarioFile::parse(BUNDLED_SCENARIOS)?,
    };
    let label = label.map_or_else(|| default_label(config), str::to_owned);
    let report = run_scenarios(&file, config, &label)?;
    match out.format {
        Format::Json => out.json(&report),
        Format::Text => {
            out.text(&render_report(&report))?;
            out.line("")?;
            out.text(&render_comparison(std::slice::from_ref(&report)))
        }
    }
}

pub fn replay(config: &EngineConfig, log: &Path, verify: bool, out: &mut Output<'_>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(log).map_err(CliError::io(log))?;
    let dimension = config.embedding_dimension();
    if verify {
        let result = verify_log(&text, dimension, &config.weights);
        if out.format == Format::Json {
            let doc = match &result {
                Ok(v) => json!({"verified": true, "event_count": v.event_count, "state_hash": v.state_hash}),
                Err(e) => json!({"verified": false, "error": e.to_string()}),
            };
            out.json(&doc)?;
        }
        let verified = result?;
        if out.format == Format::Text {
            out.line(&format!("verified: {} events, state {}", verified.event_count, verified.state_hash))?;
        }
        return Ok(());
    }
    let parsed = parse_log(&text)?;
    let (graph, index) = persistence::replay::<f64>(&parsed.events, dimension, &config.weights)?;
    let hash = persistence::state_hash(&graph, &index);
    let summary = json!({
        "event_count": parsed.events.len(),
        "node_count": graph.node_count(),
        "edge_count": graph.edge_count(),
        "chunk_count": index.len(),
        "sealed": parsed.footer.is_some(),
        "state_hash": hash,
    });
    match out.format {
        Format::Json => out.json(&summary),
        Format::Text => out.line(&format!(
            "{} events, {} nodes, {} edges, {} chunks, state {}{}",
            parsed.events.len(),
            graph.node_count(),
            graph.edge_count(),
            index.len(),
            hash,
            if parsed.footer.is_some() { "" } else { " (unsealed)" }
        )),
    }
}

pub fn serve(config: EngineConfig, listen: Option<String>) -> Result<(), CliError> {
    let addr = listen.unwrap_or_else(|| config.listen_addr.clone());
    let engine = Arc::new(Engine::from_config(config)?);
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::io("tokio runtime"))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(CliError::io(&addr))?;
        chronomem_server::serve(engine.clone(), listener).await.map_err(CliError::io(&addr))
    })?;
    if engine.config().log_path.is_some() {
        engine.seal_log()?;
    }
    Ok(())
}
