//! Graph construction: parse every ticket into its tree, then connect trees
//! with explicit tracker links and implicit title-similarity edges.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;

use crate::adapter::AdapterHandle;
use crate::embedding::{dot, index_trees, tokenize, ChunkParams, Embedder, VectorIndex};
use crate::error::{Error, Result};
use crate::model::{BuildParams, InterTicketEdge, KnowledgeGraph, TicketTree, SIMILARITY_EPSILON};
use crate::parser::{parse_ticket, RawTicket};
use crate::template::GraphTemplate;

pub const DEFAULT_THETA: f64 = 0.75;
pub const IMPLICIT_BASIS: &str = "title";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphBuildConfig {
    pub theta: f64,
    /// Keep at most this many implicit links per ticket (by weight).
    pub implicit_cap: Option<usize>,
    pub chunking: ChunkParams,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            implicit_cap: None,
            chunking: ChunkParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphBuild {
    pub graph: KnowledgeGraph,
    pub index: VectorIndex,
    pub warnings: Vec<String>,
}

/// `"Caused By"` -> `"caused_by"`.
pub fn normalize_relation(label: &str) -> String {
    label
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

/// One explicit edge per declared `(src, relation, dst)` whose target is in
/// the batch. Dangling and self references are dropped with a warning.
pub fn build_explicit_edges(tickets: &[RawTicket]) -> (Vec<InterTicketEdge>, Vec<String>) {
    let ids: HashSet<&str> = tickets.iter().map(|t| t.ticket_id.as_str()).collect();
    let mut edges = BTreeMap::new();
    let mut warnings = Vec::new();
    for ticket in tickets {
        for (relation, targets) in &ticket.link_fields {
            let relation = normalize_relation(relation);
            if relation.is_empty() {
                warnings.push(format!("{}: link field with empty relation ignored", ticket.ticket_id));
                continue;
            }
            for target in targets {
                let target = target.trim();
                if target == ticket.ticket_id {
                    warnings.push(format!("{}: self reference via {relation} dropped", ticket.ticket_id));
                } else if !ids.contains(target) {
                    warnings.push(format!(
                        "{}: {relation} reference to {target} dropped (not in batch)",
                        ticket.ticket_id
                    ));
                } else {
                    let edge = InterTicketEdge::explicit(&ticket.ticket_id, target, &relation);
                    edges.insert((ticket.ticket_id.clone(), target.to_string(), relation.clone()), edge);
                }
            }
        }
    }
    (edges.into_values().collect(), warnings)
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Config(format!("theta must be in (0, 1], got {theta}")));
    }
    Ok(())
}

/// Whether a cosine clears the implicit-edge threshold.
pub fn meets_threshold(cosine: f64, theta: f64) -> bool {
    cosine >= theta - SIMILARITY_EPSILON
}

/// Implicit edges between every pair of tickets whose title embeddings reach
/// `theta`, stored in both directions. Tickets whose title has no tokens are
/// not linked. With `cap`, a pair survives if it is among the `cap` strongest
/// links of either endpoint.
pub fn build_implicit_edges<'a>(
    trees: impl IntoIterator<Item = &'a TicketTree>,
    embedder: &dyn Embedder,
    theta: f64,
    cap: Option<usize>,
) -> Result<Vec<InterTicketEdge>> {
    check_theta(theta)?;
    let mut trees: Vec<&TicketTree> = trees
        .into_iter()
        .filter(|t| !tokenize(&t.title).is_empty())
        .collect();
    trees.sort_by(|a, b| a.ticket_id.cmp(&b.ticket_id));
    let vectors: Vec<Vec<f64>> = trees.par_iter().map(|t| embedder.embed(&t.title)).collect();

    let mut pairs: Vec<(usize, usize, f64)> = (0..trees.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let vectors = &vectors;
            (i + 1..vectors.len()).filter_map(move |j| {
                let w = dot(&vectors[i], &vectors[j]).clamp(-1.0, 1.0);
                meets_threshold(w, theta).then_some((i, j, w))
            })
        })
        .collect();

    if let Some(cap) = cap {
        let mut per_ticket: Vec<Vec<(usize, f64, usize)>> = vec![Vec::new(); trees.len()];
        for (p, &(i, j, w)) in pairs.iter().enumerate() {
            per_ticket[i].push((j, w, p));
            per_ticket[j].push((i, w, p));
        }
        let mut keep = BTreeSet::new();
        for links in &mut per_ticket {
            links.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            keep.extend(links.iter().take(cap).map(|&(_, _, p)| p));
        }
        pairs = pairs
            .into_iter()
            .enumerate()
            .filter(|(p, _)| keep.contains(p))
            .map(|(_, pair)| pair)
            .collect();
    }

    let mut edges = Vec::with_capacity(pairs.len() * 2);
    for (i, j, w) in pairs {
        let (a, b) = (&trees[i].ticket_id, &trees[j].ticket_id);
        edges.push(InterTicketEdge::implicit(a, b, w));
        edges.push(InterTicketEdge::implicit(b, a, w));
    }
    edges.sort_by(|a, b| a.cmp_key(b));
    Ok(edges)
}

/// Parses all tickets, links them, and indexes embeddable section chunks.
/// A ticket that fails validation aborts the build.
pub fn build_graph(
    tickets: &[RawTicket],
    template: &GraphTemplate,
    adapter: Option<&AdapterHandle>,
    embedder: &dyn Embedder,
    config: &GraphBuildConfig,
) -> Result<GraphBuild> {
    check_theta(config.theta)?;
    let mut seen = HashSet::new();
    for ticket in tickets {
        if !seen.insert(ticket.ticket_id.as_str()) {
            return Err(Error::InvalidTicket(format!("duplicate ticket_id {}", ticket.ticket_id)));
        }
    }

    let outcomes: Vec<Result<_>> = tickets
        .par_iter()
        .map(|t| {
            parse_ticket(t, template, adapter)
                .map_err(|e| Error::InvalidTicket(format!("{}: {e}", t.ticket_id)))
        })
        .collect();
    let mut trees = BTreeMap::new();
    let mut warnings = Vec::new();
    for outcome in outcomes {
        let outcome = outcome?;
        warnings.extend(outcome.warnings);
        trees.insert(outcome.tree.ticket_id.clone(), outcome.tree);
    }

    let (mut edges, link_warnings) = build_explicit_edges(tickets);
    warnings.extend(link_warnings);
    edges.extend(build_implicit_edges(trees.values(), embedder, config.theta, config.implicit_cap)?);

    let index = index_trees(trees.values(), template, embedder, config.chunking)?;
    let params = BuildParams {
        theta: config.theta,
        embedder_fingerprint: embedder.fingerprint(),
        implicit_basis: IMPLICIT_BASIS.to_string(),
        implicit_cap: config.implicit_cap,
    };
    let graph = KnowledgeGraph::new(template.clone(), trees, edges, params);
    Ok(GraphBuild { graph, index, warnings })
}
