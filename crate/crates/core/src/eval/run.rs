//! Side-by-side evaluation of the graph pipeline and the baseline retriever.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{bleu, hit_at_k, meteor_simple, ndcg_single, reciprocal_rank, rouge_l};
use crate::query::engine::{AnswerMode, Engine};

pub const GRAPH_SYSTEM: &str = "graph";
pub const BASELINE_SYSTEM: &str = "baseline";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query: String,
    pub gold_ticket_ids: BTreeSet<String>,
    pub gold_answer: String,
}

/// Which answer text the overlap metrics score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaText {
    /// The retrieved section or chunk texts, without composer labels.
    #[default]
    Retrieved,
    /// The composed answer text as returned to users.
    Composed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub ks: Vec<usize>,
    /// How many tickets each system ranks per query.
    pub rank_depth: usize,
    pub qa_text: QaText,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            ks: vec![1, 3, 5],
            rank_depth: 10,
            qa_text: QaText::Retrieved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query: String,
    pub ranking: Vec<String>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<AnswerMode>,
    pub reciprocal_rank: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub bleu: f64,
    pub rouge_l: f64,
    pub meteor_simple: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub system: String,
    pub queries: usize,
    pub mrr: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub bleu: f64,
    pub rouge_l: f64,
    pub meteor_simple: f64,
    pub per_query: Vec<QueryMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub embedder_fingerprint: String,
    pub tickets: usize,
    pub ks: Vec<usize>,
    pub rank_depth: usize,
    pub qa_text: QaText,
    pub tokenization: String,
    pub rouge: String,
    pub meteor: String,
    pub bleu: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: ReportMetadata,
    pub graph: MetricReport,
    pub baseline: MetricReport,
}

fn score_query(
    record: &EvalRecord,
    ranking: Vec<String>,
    answer: String,
    mode: Option<AnswerMode>,
    ks: &[usize],
) -> QueryMetrics {
    let gold = &record.gold_ticket_ids;
    QueryMetrics {
        query: record.query.clone(),
        reciprocal_rank: reciprocal_rank(&ranking, gold),
        recall_at: ks.iter().map(|&k| (k, hit_at_k(&ranking, gold, k))).collect(),
        ndcg_at: ks.iter().map(|&k| (k, ndcg_single(&ranking, gold, k))).collect(),
        bleu: bleu(&answer, &record.gold_answer),
        rouge_l: rouge_l(&answer, &record.gold_answer),
        meteor_simple: meteor_simple(&answer, &record.gold_answer),
        ranking,
        answer,
        mode,
    }
}

fn aggregate(system: &str, ks: &[usize], per_query: Vec<QueryMetrics>) -> MetricReport {
    let n = per_query.len();
    let mean = |f: &dyn Fn(&QueryMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_query.iter().map(f).sum::<f64>() / n as f64
        }
    };
    MetricReport {
        system: system.to_string(),
        queries: n,
        mrr: mean(&|q| q.reciprocal_rank),
        recall_at: ks.iter().map(|&k| (k, mean(&|q| q.recall_at[&k]))).collect(),
        ndcg_at: ks.iter().map(|&k| (k, mean(&|q| q.ndcg_at[&k]))).collect(),
        bleu: mean(&|q| q.bleu),
        rouge_l: mean(&|q| q.rouge_l),
        meteor_simple: mean(&|q| q.meteor_simple),
        per_query,
    }
}

fn evaluate_one(engine: &Engine, record: &EvalRecord, settings: &EvalSettings) -> Result<(QueryMetrics, QueryMetrics)> {
    let graph_answer = engine.answer(&record.query)?;
    let graph_text = match settings.qa_text {
        QaText::Retrieved => graph_answer.retrieved_text(),
        QaText::Composed => graph_answer.text.clone(),
    };
    let graph_ranking = engine.graph_ranking(&record.query, settings.rank_depth)?;

    let baseline_ranking = engine.baseline_ranking(&record.query, settings.rank_depth)?;
    let baseline_text = match settings.qa_text {
        QaText::Retrieved => engine
            .baseline()
            .retrieve(engine.embedder(), &record.query, 1)?
            .into_iter()
            .next()
            .map(|h| h.text)
            .unwrap_or_default(),
        QaText::Composed => engine.fallback_answer(&record.query, "baseline system".into())?.text,
    };
    Ok((
        score_query(record, graph_ranking, graph_text, Some(graph_answer.mode), &settings.ks),
        score_query(record, baseline_ranking, baseline_text, None, &settings.ks),
    ))
}

/// Runs every golden query through both systems on the same engine, so both
/// share one corpus and one embedder. Per-query work runs in parallel; the
/// report keeps golden-set order.
pub fn run_eval(engine: &Engine, golden: &[EvalRecord], settings: &EvalSettings) -> Result<EvalReport> {
    if settings.ks.is_empty() || settings.ks.contains(&0) {
        return Err(Error::Config("ks must be a non-empty list of positive cut-offs".into()));
    }
    let mut ks = settings.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let settings = EvalSettings {
        ks,
        rank_depth: settings.rank_depth.max(*settings.ks.iter().max().unwrap_or(&1)),
        qa_text: settings.qa_text,
    };
    for (i, record) in golden.iter().enumerate() {
        if record.query.is_empty() {
            return Err(Error::InvalidInput(format!("golden record {i} has an empty query")));
        }
        if record.gold_ticket_ids.is_empty() {
            return Err(Error::InvalidInput(format!("golden record {i} has no gold ticket ids")));
        }
        if let Some(missing) = record.gold_ticket_ids.iter().find(|id| !engine.graph().contains(id)) {
            return Err(Error::InvalidInput(format!(
                "golden record {i} names ticket {missing} which is not in the corpus"
            )));
        }
    }
    let results: Vec<Result<(QueryMetrics, QueryMetrics)>> =
        golden.par_iter().map(|r| evaluate_one(engine, r, &settings)).collect();
    let mut graph = Vec::with_capacity(golden.len());
    let mut baseline = Vec::with_capacity(golden.len());
    for r in results {
        let (g, b) = r?;
        graph.push(g);
        baseline.push(b);
    }
    Ok(EvalReport {
        metadata: ReportMetadata {
            embedder_fingerprint: engine.embedder().fingerprint(),
            tickets: engine.graph().ticket_count(),
            ks: settings.ks.clone(),
            rank_depth: settings.rank_depth,
            qa_text: settings.qa_text,
            tokenization: "lowercase, split on non-alphanumeric characters".into(),
            rouge: "rouge_l: longest-common-subsequence F-measure, beta 1.2".into(),
            meteor: "meteor_simple: exact unigram matches only, no stemming or synonyms".into(),
            bleu: "sentence BLEU-4, uniform weights, brevity penalty, add-one smoothing for empty higher orders".into(),
        },
        graph: aggregate(GRAPH_SYSTEM, &settings.ks, graph),
        baseline: aggregate(BASELINE_SYSTEM, &settings.ks, baseline),
    })
}

impl EvalReport {
    /// Fixed-width comparison: a retrieval table and an answer-quality table.
    pub fn table(&self) -> String {
        let ks = &self.metadata.ks;
        let mut out = String::new();
        let mut header = format!("{:<10}{:>8}", "Retrieval", "MRR");
        for k in ks {
            header.push_str(&format!("{:>11}", format!("Recall@{k}")));
        }
        for k in ks {
            header.push_str(&format!("{:>9}", format!("NDCG@{k}")));
        }
        let _ = writeln!(out, "{header}");
        for r in [&self.baseline, &self.graph] {
            let mut line = format!("{:<10}{:>8.3}", r.system, r.mrr);
            for k in ks {
                line.push_str(&format!("{:>11.3}", r.recall_at[k]));
            }
            for k in ks {
                line.push_str(&format!("{:>9.3}", r.ndcg_at[k]));
            }
            let _ = writeln!(out, "{line}");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<10}{:>8}{:>9}{:>15}", "Answers", "BLEU", "ROUGE-L", "METEOR-simple");
        for r in [&self.baseline, &self.graph] {
            let _ = writeln!(out, "{:<10}{:>8.3}{:>9.3}{:>15.3}", r.system, r.bleu, r.rouge_l, r.meteor_simple);
        }
        out
    }
}
