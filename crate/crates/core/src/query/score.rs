//! Ticket-level relevance from query entities.
//!
//! For each entity `(section, value)` the value is compared with every
//! indexed node of that section; a ticket's score is the sum of its
//! per-entity contributions. A ticket lacking the section contributes zero
//! for that entity.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::embedding::{rank_order, Embedder, VectorIndex};
use crate::error::{Error, Result};
use crate::model::KnowledgeGraph;

/// How chunks of one node combine into that node's contribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkAggregation {
    /// Best chunk of the node.
    #[default]
    BestChunk,
    /// Sum over every indexed chunk, the literal per-node sum.
    SumAllChunks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicketScore {
    pub ticket_id: String,
    pub score: f64,
    pub per_entity: BTreeMap<String, f64>,
}

/// Scores every ticket in the graph and returns the best `k_ticket`,
/// descending by score, ties by ascending ticket id.
pub fn score_tickets(
    entities: &BTreeMap<String, String>,
    index: &VectorIndex,
    graph: &KnowledgeGraph,
    embedder: &dyn Embedder,
    k_ticket: usize,
    aggregation: ChunkAggregation,
) -> Result<Vec<TicketScore>> {
    if entities.is_empty() {
        return Err(Error::InvalidInput("entity map is empty".into()));
    }
    if k_ticket == 0 {
        return Err(Error::InvalidInput("k_ticket must be at least 1".into()));
    }
    if index.fingerprint() != embedder.fingerprint() {
        return Err(Error::FingerprintMismatch {
            expected: index.fingerprint().to_string(),
            found: embedder.fingerprint(),
        });
    }

    let mut contributions: Vec<(&str, HashMap<&str, f64>)> = Vec::with_capacity(entities.len());
    for (section, value) in entities {
        let query = embedder.embed(value);
        let mut per_ticket: HashMap<&str, f64> = HashMap::new();
        for (entry, cos) in index.scan_section(section, &query)? {
            let id = entry.key.ticket_id.as_str();
            match aggregation {
                ChunkAggregation::BestChunk => {
                    let slot = per_ticket.entry(id).or_insert(f64::NEG_INFINITY);
                    *slot = slot.max(cos);
                }
                ChunkAggregation::SumAllChunks => *per_ticket.entry(id).or_insert(0.0) += cos,
            }
        }
        contributions.push((section.as_str(), per_ticket));
    }

    let mut scored: Vec<TicketScore> = graph
        .trees
        .keys()
        .map(|id| {
            let mut per_entity = BTreeMap::new();
            let mut score = 0.0;
            for (section, per_ticket) in &contributions {
                let c = per_ticket.get(id.as_str()).copied().unwrap_or(0.0);
                score += c;
                per_entity.insert(section.to_string(), c);
            }
            TicketScore {
                ticket_id: id.clone(),
                score,
                per_entity,
            }
        })
        .collect();
    scored.sort_by(|a, b| rank_order(&(&a.ticket_id, a.score), &(&b.ticket_id, b.score)));
    scored.truncate(k_ticket);
    Ok(scored)
}
