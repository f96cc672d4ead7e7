//! The online answer pipeline and its fallback to plain chunk retrieval.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterHandle, GenerationTask};
use crate::baseline::{BaselineIndex, ChunkHit, BASELINE_SECTION};
use crate::embedding::{Embedder, VectorIndex};
use crate::error::{Error, Result};
use crate::model::{KnowledgeGraph, NodeId};
use crate::query::parse::{parse_query, QueryParse};
use crate::query::plan::{execute_plan, plan_subgraph_query, GraphQueryPlan, PlanRow};
use crate::query::score::{score_tickets, ChunkAggregation, TicketScore};

pub const DEFAULT_K_TICKET: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub k_ticket: usize,
    /// Top-scoring tickets used as plan anchors when the query names none.
    pub anchors: usize,
    pub aggregation: ChunkAggregation,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k_ticket: DEFAULT_K_TICKET,
            anchors: 1,
            aggregation: ChunkAggregation::BestChunk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    Graph,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposerSource {
    Adapter,
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub query: String,
    pub text: String,
    pub mode: AnswerMode,
    /// Graph nodes whose text went into the answer. Empty in fallback mode,
    /// where `baseline_hits` lists the chunks used instead.
    pub provenance: Vec<NodeId>,
    pub ranked_tickets: Vec<TicketScore>,
    pub rows: Vec<PlanRow>,
    pub composer: ComposerSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<GraphQueryPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered_plan: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse: Option<QueryParse>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baseline_hits: Vec<ChunkHit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Answer {
    /// Retrieved texts without attribution labels, one per row.
    pub fn retrieved_text(&self) -> String {
        self.rows.iter().map(|r| r.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// Deterministic composer: one attributed line per row.
pub fn template_compose(rows: &[PlanRow]) -> String {
    rows.iter()
        .map(|r| format!("Per ticket {} — {}: {}", r.ticket_id, r.section, r.text))
        .collect::<Vec<_>>()
        .join("\n")
}

struct GraphRun {
    parse: QueryParse,
    ranked: Vec<TicketScore>,
    plan: GraphQueryPlan,
    rows: Vec<PlanRow>,
    warnings: Vec<String>,
}

pub struct Engine {
    graph: KnowledgeGraph,
    index: VectorIndex,
    baseline: BaselineIndex,
    embedder: Arc<dyn Embedder>,
    adapter: Option<AdapterHandle>,
    config: EngineConfig,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("tickets", &self.graph.ticket_count())
            .field("fingerprint", &self.embedder.fingerprint())
            .field("adapter", &self.adapter)
            .field("config", &self.config)
            .finish()
    }
}

impl Engine {
    /// Refuses to assemble an engine whose graph, index, baseline and
    /// embedder were not all produced by the same embedder.
    pub fn new(
        graph: KnowledgeGraph,
        index: VectorIndex,
        baseline: BaselineIndex,
        embedder: Arc<dyn Embedder>,
        adapter: Option<AdapterHandle>,
        config: EngineConfig,
    ) -> Result<Self> {
        let fp = embedder.fingerprint();
        for (what, found) in [
            ("graph", graph.build_params.embedder_fingerprint.as_str()),
            ("index", index.fingerprint()),
            ("baseline", baseline.fingerprint()),
        ] {
            if found != fp {
                return Err(Error::FingerprintMismatch {
                    expected: fp.clone(),
                    found: format!("{found} ({what})"),
                });
            }
        }
        if config.k_ticket == 0 || config.anchors == 0 {
            return Err(Error::Config("k_ticket and anchors must be at least 1".into()));
        }
        Ok(Self {
            graph,
            index,
            baseline,
            embedder,
            adapter,
            config,
        })
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn baseline(&self) -> &BaselineIndex {
        &self.baseline
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn adapter(&self) -> Option<&AdapterHandle> {
        self.adapter.as_ref()
    }

    /// Parse and score. Ticket ids named in the query and present in the
    /// graph come first in `anchors`.
    fn rank(&self, query: &str, depth: usize) -> Result<(QueryParse, Vec<TicketScore>, Vec<String>)> {
        let parse = parse_query(query, &self.graph.template, self.adapter.as_ref())?;
        let refs: Vec<String> = parse
            .ticket_refs
            .iter()
            .filter(|id| self.graph.contains(id))
            .cloned()
            .collect();
        let ranked = if parse.entities.is_empty() {
            Vec::new()
        } else {
            score_tickets(
                &parse.entities,
                &self.index,
                &self.graph,
                self.embedder.as_ref(),
                depth,
                self.config.aggregation,
            )?
        };
        Ok((parse, ranked, refs))
    }

    fn run_graph(&self, query: &str) -> Result<GraphRun> {
        let (parse, ranked, refs) = self.rank(query, self.config.k_ticket)?;
        let anchors: Vec<String> = if refs.is_empty() {
            ranked.iter().take(self.config.anchors).map(|s| s.ticket_id.clone()).collect()
        } else {
            refs
        };
        if anchors.is_empty() {
            return Err(Error::Plan("query has no entity to score and names no known ticket".into()));
        }
        let (plan, mut warnings) = plan_subgraph_query(&parse, &anchors, &self.graph.template, self.adapter.as_ref())?;
        let rows = execute_plan(&plan, &self.graph)?;
        if rows.is_empty() {
            return Err(Error::Execution(format!(
                "anchors {:?} lack sections {:?}",
                plan.anchor_tickets,
                plan.return_sections()
            )));
        }
        warnings.extend(parse.warnings.iter().cloned());
        Ok(GraphRun {
            parse,
            ranked,
            plan,
            rows,
            warnings,
        })
    }

    fn compose(&self, query: &str, rows: &[PlanRow], warnings: &mut Vec<String>) -> (String, ComposerSource) {
        if let Some(adapter) = &self.adapter {
            let prompt = format!(
                "Answer the question using only the ticket excerpts below.\n\nQuestion: {query}\n\nExcerpts:\n{}",
                template_compose(rows)
            );
            match adapter.call(
                GenerationTask::ComposeAnswer,
                prompt,
                serde_json::json!({ "query": query, "rows": rows }),
            ) {
                Ok(text) if !text.trim().is_empty() => return (text, ComposerSource::Adapter),
                Ok(_) => warnings.push("adapter composed an empty answer; used template".into()),
                Err(err) => warnings.push(format!("adapter compose failed ({err}); used template")),
            }
        }
        (template_compose(rows), ComposerSource::Template)
    }

    /// Runs the graph pipeline; any stage failure reverts to baseline chunk
    /// retrieval. Errors only when the query is empty or both paths fail.
    pub fn answer(&self, query: &str) -> Result<Answer> {
        if query.is_empty() {
            return Err(Error::UnparseableQuery("empty query".into()));
        }
        match self.run_graph(query) {
            Ok(run) => {
                let GraphRun {
                    parse,
                    ranked,
                    plan,
                    rows,
                    mut warnings,
                } = run;
                let (text, composer) = self.compose(query, &rows, &mut warnings);
                Ok(Answer {
                    query: query.to_string(),
                    text,
                    mode: AnswerMode::Graph,
                    provenance: rows.iter().map(|r| NodeId::new(&r.ticket_id, &r.section)).collect(),
                    ranked_tickets: ranked,
                    rows,
                    composer,
                    rendered_plan: Some(plan.render()),
                    plan: Some(plan),
                    parse: Some(parse),
                    baseline_hits: Vec::new(),
                    fallback_reason: None,
                    warnings,
                })
            }
            Err(err) => self.fallback_answer(query, err.to_string()),
        }
    }

    /// Answer from the baseline chunks alone.
    pub fn fallback_answer(&self, query: &str, reason: String) -> Result<Answer> {
        let no_answer = |baseline: String| Error::NoAnswer {
            graph: reason.clone(),
            baseline,
        };
        let k = self.config.k_ticket;
        let hits = self
            .baseline
            .retrieve(self.embedder.as_ref(), query, k)
            .map_err(|e| no_answer(e.to_string()))?;
        if hits.is_empty() {
            return Err(no_answer("baseline index is empty".into()));
        }
        let ranked = self
            .baseline
            .rank_tickets(self.embedder.as_ref(), query, k)
            .map_err(|e| no_answer(e.to_string()))?
            .into_iter()
            .map(|(ticket_id, score)| TicketScore {
                ticket_id,
                score,
                per_entity: [(BASELINE_SECTION.to_string(), score)].into(),
            })
            .collect();
        let rows: Vec<PlanRow> = hits
            .iter()
            .map(|h| PlanRow {
                ticket_id: h.ticket_id.clone(),
                section: BASELINE_SECTION.to_string(),
                text: h.text.clone(),
            })
            .collect();
        let mut warnings = Vec::new();
        let (text, composer) = self.compose(query, &rows, &mut warnings);
        Ok(Answer {
            query: query.to_string(),
            text,
            mode: AnswerMode::Fallback,
            provenance: Vec::new(),
            ranked_tickets: ranked,
            rows,
            composer,
            plan: None,
            rendered_plan: None,
            parse: None,
            baseline_hits: hits,
            fallback_reason: Some(reason),
            warnings,
        })
    }

    /// Ticket ranking of the graph system to `depth`: named tickets, then
    /// scored tickets. Reverts to the baseline ranking when the query cannot
    /// be parsed or scored, as `answer` does.
    pub fn graph_ranking(&self, query: &str, depth: usize) -> Result<Vec<String>> {
        match self.rank(query, depth.max(1)) {
            Ok((_, ranked, refs)) if !(ranked.is_empty() && refs.is_empty()) => {
                let mut out = refs;
                for s in ranked {
                    if !out.contains(&s.ticket_id) {
                        out.push(s.ticket_id);
                    }
                }
                out.truncate(depth);
                Ok(out)
            }
            _ => self.baseline_ranking(query, depth),
        }
    }

    pub fn baseline_ranking(&self, query: &str, depth: usize) -> Result<Vec<String>> {
        Ok(self
            .baseline
            .rank_tickets(self.embedder.as_ref(), query, depth.max(1))?
            .into_iter()
            .map(|(id, _)| id)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::StubAdapter;
    use crate::baseline::build_baseline;
    use crate::builder::{build_graph, GraphBuildConfig};
    use crate::embedding::{ChunkParams, HashEmbedder};
    use crate::parser::RawTicket;
    use crate::template::GraphTemplate;
    use std::time::Duration;

    fn tickets() -> Vec<RawTicket> {
        vec![
            RawTicket::new(
                "APP-1",
                "CSV upload error on import page",
                "Description: Uploading a CSV file fails with a parse error.\n\
                 Steps to Reproduce: open import page, choose a csv file, press upload.\n\
                 Fix Solution: strip the byte order mark before parsing the file.",
            ),
            RawTicket::new(
                "APP-2",
                "Login button unresponsive",
                "Description: The login button does nothing on mobile.\n\
                 Fix Solution: rebind the click handler after hydration.",
            ),
        ]
    }

    fn engine(adapter: bool) -> Engine {
        let tpl = GraphTemplate::standard();
        let embedder: Arc<dyn Embedder> = Arc::new(HashEmbedder::default());
        let handle = adapter.then(|| AdapterHandle::new(Arc::new(StubAdapter::new(tpl.clone())), Duration::from_secs(5)));
        let built = build_graph(&tickets(), &tpl, handle.as_ref(), embedder.as_ref(), &GraphBuildConfig::default()).unwrap();
        let baseline = build_baseline(&tickets(), embedder.as_ref(), ChunkParams::default()).unwrap();
        Engine::new(built.graph, built.index, baseline, embedder, handle, EngineConfig::default()).unwrap()
    }

    #[test]
    fn fix_query_answers_from_graph() {
        for with_adapter in [false, true] {
            let e = engine(with_adapter);
            let a = e.answer("fix for csv upload error").unwrap();
            assert_eq!(a.mode, AnswerMode::Graph);
            assert_eq!(a.provenance, vec![NodeId::new("APP-1", "fix solution")]);
            assert_eq!(a.text, "Per ticket APP-1 — fix solution: strip the byte order mark before parsing the file.");
            assert_eq!(a.ranked_tickets[0].ticket_id, "APP-1");
            for p in &a.provenance {
                assert!(e.graph().node(p).is_some());
            }
        }
    }

    #[test]
    fn named_ticket_anchors_the_plan() {
        let a = engine(false).answer("how to reproduce APP-1's issue").unwrap();
        assert_eq!(a.mode, AnswerMode::Graph);
        assert_eq!(a.plan.as_ref().unwrap().anchor_tickets, vec!["APP-1"]);
        assert_eq!(a.rows[0].text, "open import page, choose a csv file, press upload.");
        assert!(a.rendered_plan.unwrap().contains("HAS_STEPS_TO_REPRODUCE"));
    }

    #[test]
    fn unparseable_query_falls_back() {
        let a = engine(false).answer("???").unwrap();
        assert_eq!(a.mode, AnswerMode::Fallback);
        assert!(a.provenance.is_empty());
        assert!(!a.baseline_hits.is_empty());
        assert!(a.fallback_reason.is_some());
    }

    #[test]
    fn missing_section_falls_back() {
        // APP-2 has no steps; the plan yields no rows
        let a = engine(false).answer("how to reproduce APP-2").unwrap();
        assert_eq!(a.mode, AnswerMode::Fallback);
    }

    #[test]
    fn unknown_entities_still_rank() {
        let a = engine(false).answer("fix for zebra xylophone").unwrap();
        assert_eq!(a.mode, AnswerMode::Graph);
        assert_eq!(a.ranked_tickets.len(), 2);
    }

    #[test]
    fn empty_query_is_the_only_error() {
        let e = engine(false);
        assert!(e.answer("").is_err());
        assert!(e.answer("   ").is_ok());
    }

    #[test]
    fn fingerprint_mismatch_refuses_to_build() {
        let tpl = GraphTemplate::standard();
        let e512 = HashEmbedder::default();
        let built = build_graph(&tickets(), &tpl, None, &e512, &GraphBuildConfig::default()).unwrap();
        let other: Arc<dyn Embedder> = Arc::new(HashEmbedder::new(64).unwrap());
        let baseline = build_baseline(&tickets(), other.as_ref(), ChunkParams::default()).unwrap();
        assert!(matches!(
            Engine::new(built.graph, built.index, baseline, other, None, EngineConfig::default()),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn rankings_for_eval() {
        let e = engine(false);
        assert_eq!(e.graph_ranking("fix for csv upload error", 2).unwrap(), vec!["APP-1", "APP-2"]);
        assert_eq!(e.graph_ranking("APP-2", 1).unwrap(), vec!["APP-2"]);
        assert_eq!(e.baseline_ranking("login button", 1).unwrap(), vec!["APP-2"]);
    }
}
