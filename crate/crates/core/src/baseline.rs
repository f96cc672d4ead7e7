//! Conventional chunk-based text retrieval: each ticket flattened to plain
//! text, cut into fixed token windows, embedded, searched by cosine.
//!
//! Serves as the control system in evaluation and as the online fallback.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{chunk_node_text, top_k, ChunkParams, Embedder, VectorEntry, VectorIndex, VectorKey};
use crate::error::{Error, Result};
use crate::parser::RawTicket;

/// Section name under which baseline chunks are keyed.
pub const BASELINE_SECTION: &str = "text";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineChunk {
    pub ticket_id: String,
    pub chunk_index: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkHit {
    pub ticket_id: String,
    pub chunk_index: u32,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct BaselineIndex {
    params: ChunkParams,
    index: VectorIndex,
    chunks: Vec<BaselineChunk>,
    by_key: HashMap<VectorKey, usize>,
}

/// The plain-text view of a ticket: title line, then body.
pub fn flatten_ticket(ticket: &RawTicket) -> String {
    if ticket.body.is_empty() {
        ticket.title.clone()
    } else {
        format!("{}\n{}", ticket.title, ticket.body)
    }
}

pub fn build_baseline(tickets: &[RawTicket], embedder: &dyn Embedder, params: ChunkParams) -> Result<BaselineIndex> {
    let mut sorted: Vec<&RawTicket> = tickets.iter().collect();
    sorted.sort_by(|a, b| a.ticket_id.cmp(&b.ticket_id));
    let chunks: Vec<BaselineChunk> = sorted
        .iter()
        .flat_map(|t| {
            chunk_node_text(&flatten_ticket(t), params)
                .into_iter()
                .map(|c| BaselineChunk {
                    ticket_id: t.ticket_id.clone(),
                    chunk_index: c.index as u32,
                    text: c.text,
                })
        })
        .collect();
    let vectors: Vec<Vec<f64>> = chunks.par_iter().map(|c| embedder.embed(&c.text)).collect();
    let mut index = VectorIndex::for_embedder(embedder);
    for (chunk, vector) in chunks.iter().zip(vectors) {
        index.insert(VectorEntry {
            key: key_for(chunk),
            vector,
            text_len: chunk.text.chars().count(),
        })?;
    }
    BaselineIndex::from_parts(params, index, chunks)
}

fn key_for(chunk: &BaselineChunk) -> VectorKey {
    VectorKey {
        ticket_id: chunk.ticket_id.clone(),
        section: BASELINE_SECTION.to_string(),
        chunk_index: chunk.chunk_index,
    }
}

impl BaselineIndex {
    /// Reassembles a persisted baseline; entry `i` of the index must belong
    /// to chunk `i`.
    pub fn from_parts(params: ChunkParams, index: VectorIndex, chunks: Vec<BaselineChunk>) -> Result<Self> {
        if index.len() != chunks.len() {
            return Err(Error::InvalidInput(format!(
                "baseline has {} vectors but {} chunks",
                index.len(),
                chunks.len()
            )));
        }
        let mut by_key = HashMap::with_capacity(chunks.len());
        for (i, (entry, chunk)) in index.entries().iter().zip(&chunks).enumerate() {
            if entry.key != key_for(chunk) {
                return Err(Error::InvalidInput(format!(
                    "baseline vector {i} is keyed {:?} but chunk is {}#{}",
                    entry.key, chunk.ticket_id, chunk.chunk_index
                )));
            }
            by_key.insert(entry.key.clone(), i);
        }
        Ok(Self {
            params,
            index,
            chunks,
            by_key,
        })
    }

    pub fn params(&self) -> ChunkParams {
        self.params
    }

    pub fn vectors(&self) -> &VectorIndex {
        &self.index
    }

    pub fn chunks(&self) -> &[BaselineChunk] {
        &self.chunks
    }

    pub fn fingerprint(&self) -> &str {
        self.index.fingerprint()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    fn check_embedder(&self, embedder: &dyn Embedder) -> Result<()> {
        let fp = embedder.fingerprint();
        if fp != self.index.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: self.index.fingerprint().to_string(),
                found: fp,
            });
        }
        Ok(())
    }

    /// Exact top-k chunks by cosine with the query.
    pub fn retrieve(&self, embedder: &dyn Embedder, query: &str, k: usize) -> Result<Vec<ChunkHit>> {
        self.check_embedder(embedder)?;
        let hits = self.index.search(BASELINE_SECTION, &embedder.embed(query), k.max(1))?;
        Ok(hits
            .into_iter()
            .map(|hit| {
                let chunk = &self.chunks[self.by_key[&hit.key]];
                ChunkHit {
                    ticket_id: chunk.ticket_id.clone(),
                    chunk_index: chunk.chunk_index,
                    score: hit.score,
                    text: chunk.text.clone(),
                }
            })
            .collect())
    }

    /// Ticket ranking by best chunk score, descending, ties by id.
    pub fn rank_tickets(&self, embedder: &dyn Embedder, query: &str, k: usize) -> Result<Vec<(String, f64)>> {
        self.check_embedder(embedder)?;
        let q = embedder.embed(query);
        let mut best: BTreeMap<&str, f64> = BTreeMap::new();
        for (entry, score) in self.index.scan_section(BASELINE_SECTION, &q)? {
            let slot = best.entry(entry.key.ticket_id.as_str()).or_insert(f64::NEG_INFINITY);
            *slot = slot.max(score);
        }
        Ok(top_k(best, k.max(1))
            .into_iter()
            .map(|(id, s)| (id.to_string(), s))
            .collect())
    }
}
