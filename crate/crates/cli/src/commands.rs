//! Verb implementations shared by the command line and the HTTP service.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use ticketgraph::ingest::{normalize_tickets, read_golden, read_tickets, write_jsonl};
use ticketgraph::snapshot::Manifest;
use ticketgraph::{Answer, AnswerMode, Embedder, Engine, EvalReport, EvalSettings, Snapshot};

use crate::settings::Settings;

/// An engine together with the manifest of the snapshot it was loaded from.
#[derive(Debug)]
pub struct Loaded {
    pub engine: Engine,
    pub manifest: Manifest,
}

/// Loads the configured snapshot and assembles an engine. Fails when the
/// snapshot is missing, damaged, or was built by a different embedder.
pub fn load_engine(settings: &Settings) -> Result<Loaded> {
    let snapshot = Snapshot::load(&settings.snapshot_dir)?;
    let template = snapshot.graph.template.clone();
    let embedder: Arc<dyn Embedder> = Arc::new(settings.embedder()?);
    let adapter = settings.adapter(&template)?;
    let manifest = snapshot.manifest;
    let engine = Engine::new(
        snapshot.graph,
        snapshot.index,
        snapshot.baseline,
        embedder,
        adapter,
        settings.engine_config(),
    )
    .with_context(|| format!("snapshot {} does not match the configured embedder", settings.snapshot_dir.display()))?;
    Ok(Loaded { engine, manifest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub tickets: usize,
    pub warnings: Vec<String>,
}

pub fn ingest(input: &Path, output: &Path) -> Result<IngestSummary> {
    let raw = read_tickets(input)?;
    let (tickets, warnings) = normalize_tickets(raw)?;
    write_jsonl(output, &tickets).with_context(|| format!("cannot write {}", output.display()))?;
    Ok(IngestSummary { tickets: tickets.len(), warnings })
}

pub fn build(settings: &Settings, tickets_path: &Path) -> Result<(Manifest, Vec<String>)> {
    let (tickets, mut warnings) = normalize_tickets(read_tickets(tickets_path)?)?;
    let template = settings.template()?;
    let adapter = settings.adapter(&template)?;
    let embedder = settings.embedder()?;
    let (mut snapshot, build_warnings) =
        Snapshot::build(&tickets, &template, adapter.as_ref(), &embedder, &settings.snapshot_config()?)?;
    warnings.extend(build_warnings);
    snapshot.save(&settings.snapshot_dir)?;
    Ok((snapshot.manifest, warnings))
}

/// Body of a query response, identical on the command line (`--json`) and
/// over HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub snapshot_id: String,
    #[serde(flatten)]
    pub answer: Answer,
}

pub fn query(loaded: &Loaded, text: &str) -> ticketgraph::Result<QueryResponse> {
    let answer = loaded.engine.answer(text)?;
    Ok(QueryResponse {
        snapshot_id: loaded.manifest.snapshot_id.clone(),
        answer,
    })
}

/// Human-readable form: answer, provenance, ranked tickets and the plan.
pub fn render_answer(answer: &Answer) -> String {
    let mut out = String::new();
    let mode = match answer.mode {
        AnswerMode::Graph => "graph",
        AnswerMode::Fallback => "fallback",
    };
    let _ = writeln!(out, "mode: {mode}");
    if let Some(reason) = &answer.fallback_reason {
        let _ = writeln!(out, "fallback reason: {reason}");
    }
    let _ = writeln!(out, "\nanswer:");
    for line in answer.text.lines() {
        let _ = writeln!(out, "  {line}");
    }
    let _ = writeln!(out, "\nprovenance:");
    if answer.provenance.is_empty() && answer.baseline_hits.is_empty() {
        let _ = writeln!(out, "  (none)");
    }
    for node in &answer.provenance {
        let _ = writeln!(out, "  {}  {}", node.ticket_id, node.section);
    }
    for hit in &answer.baseline_hits {
        let _ = writeln!(out, "  {}  chunk {}  {:.4}", hit.ticket_id, hit.chunk_index, hit.score);
    }
    if !answer.ranked_tickets.is_empty() {
        let _ = writeln!(out, "\nranked tickets:");
        for (i, t) in answer.ranked_tickets.iter().enumerate() {
            let _ = writeln!(out, "  {}. {}  {:.4}", i + 1, t.ticket_id, t.score);
        }
    }
    if let Some(plan) = &answer.rendered_plan {
        let _ = writeln!(out, "\nplan:");
        for line in plan.lines() {
            let _ = writeln!(out, "  {line}");
        }
    }
    for w in &answer.warnings {
        let _ = writeln!(out, "\nwarning: {w}");
    }
    out
}

pub fn eval(loaded: &Loaded, golden: &Path, settings: &EvalSettings) -> Result<EvalReport> {
    let records = read_golden(golden)?;
    Ok(ticketgraph::run_eval(&loaded.engine, &records, settings)?)
}
