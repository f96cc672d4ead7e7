//! Dual-level graph model: one section tree per ticket, plus typed edges
//! between tickets.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::template::{relation_label, GraphTemplate, ROOT_SECTION};

/// Relation label carried by every implicit edge.
pub const SIMILAR_TO: &str = "similar_to";

/// Slack applied when comparing a cosine against the implicit-edge threshold.
/// Two float routes to the same cosine can differ by a few ulps; distinct
/// cosines of real texts are never this close.
pub const SIMILARITY_EPSILON: f64 = 1e-9;

/// `(ticket_id, section)`, unique across the graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub ticket_id: String,
    pub section: String,
}

impl NodeId {
    pub fn new(ticket_id: impl Into<String>, section: impl Into<String>) -> Self {
        Self {
            ticket_id: ticket_id.into(),
            section: section.into(),
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.ticket_id, self.section)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionNode {
    pub id: NodeId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntraEdge {
    pub parent: NodeId,
    pub child: NodeId,
    pub relation: String,
}

/// One ticket as a tree of sections. The root node carries the ticket title;
/// `nodes` holds the section nodes below it in template order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicketTree {
    pub ticket_id: String,
    pub title: String,
    pub root: SectionNode,
    pub nodes: Vec<SectionNode>,
    pub intra_edges: Vec<IntraEdge>,
}

impl TicketTree {
    /// Assembles a tree from extracted sections. A section whose template
    /// parent is missing hangs off its nearest present ancestor.
    pub fn from_sections(
        ticket_id: &str,
        title: &str,
        sections: &BTreeMap<String, String>,
        template: &GraphTemplate,
    ) -> Self {
        let root = SectionNode {
            id: NodeId::new(ticket_id, ROOT_SECTION),
            text: title.to_string(),
            parent: None,
        };
        let mut nodes = Vec::new();
        let mut intra_edges = Vec::new();
        for spec in &template.sections {
            let Some(text) = sections.get(&spec.name) else {
                continue;
            };
            let parent = template
                .lineage(&spec.name)
                .unwrap_or_default()
                .into_iter()
                .rev()
                .skip(1)
                .find(|ancestor| sections.contains_key(*ancestor))
                .map(|ancestor| NodeId::new(ticket_id, ancestor))
                .unwrap_or_else(|| root.id.clone());
            let id = NodeId::new(ticket_id, spec.name.clone());
            intra_edges.push(IntraEdge {
                parent: parent.clone(),
                child: id.clone(),
                relation: relation_label(&spec.name),
            });
            nodes.push(SectionNode {
                id,
                text: text.clone(),
                parent: Some(parent),
            });
        }
        Self {
            ticket_id: ticket_id.to_string(),
            title: title.to_string(),
            root,
            nodes,
            intra_edges,
        }
    }

    /// Looks up a node by section name; `"ticket"` returns the root.
    pub fn node(&self, section: &str) -> Option<&SectionNode> {
        if section == ROOT_SECTION {
            return Some(&self.root);
        }
        self.nodes.iter().find(|n| n.id.section == section)
    }

    pub fn section_text(&self, section: &str) -> Option<&str> {
        self.node(section).map(|n| n.text.as_str())
    }

    /// Child reached from `parent` over an edge labelled `relation`.
    pub fn child_via(&self, parent: &NodeId, relation: &str) -> Option<&SectionNode> {
        self.intra_edges
            .iter()
            .find(|e| &e.parent == parent && e.relation == relation)
            .and_then(|e| self.node(&e.child.section))
    }

    pub fn all_nodes(&self) -> impl Iterator<Item = &SectionNode> {
        std::iter::once(&self.root).chain(self.nodes.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Explicit,
    Implicit,
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeKind::Explicit => f.write_str("explicit"),
            EdgeKind::Implicit => f.write_str("implicit"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterTicketEdge {
    pub src: String,
    pub dst: String,
    pub kind: EdgeKind,
    pub relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl InterTicketEdge {
    pub fn explicit(src: &str, dst: &str, relation: &str) -> Self {
        Self {
            src: src.to_string(),
            dst: dst.to_string(),
            kind: EdgeKind::Explicit,
            relation: relation.to_string(),
            weight: None,
        }
    }

    pub fn implicit(src: &str, dst: &str, weight: f64) -> Self {
        Self {
            src: src.to_string(),
            dst: dst.to_string(),
            kind: EdgeKind::Implicit,
            relation: SIMILAR_TO.to_string(),
            weight: Some(weight),
        }
    }

    /// Identity of an edge; the weight is an attribute, not part of the key.
    pub fn key(&self) -> (&str, &str, EdgeKind, &str) {
        (&self.src, &self.dst, self.kind, &self.relation)
    }

    pub fn cmp_key(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    pub theta: f64,
    pub embedder_fingerprint: String,
    /// Text each ticket contributes to implicit similarity.
    pub implicit_basis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implicit_cap: Option<usize>,
}

/// Immutable snapshot of every ticket tree and the edges between them.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub template: GraphTemplate,
    pub trees: BTreeMap<String, TicketTree>,
    pub edges: Vec<InterTicketEdge>,
    pub build_params: BuildParams,
    adjacency: BTreeMap<String, Vec<usize>>,
}

impl KnowledgeGraph {
    /// Wraps the parts into a graph without validating them; edges are sorted
    /// by key. Use [`validate_graph`] to check invariants.
    pub fn new(
        template: GraphTemplate,
        trees: BTreeMap<String, TicketTree>,
        mut edges: Vec<InterTicketEdge>,
        build_params: BuildParams,
    ) -> Self {
        edges.sort_by(|a, b| a.cmp_key(b));
        let mut adjacency: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, edge) in edges.iter().enumerate() {
            adjacency.entry(edge.src.clone()).or_default().push(i);
            // implicit edges are stored in both directions already
            if edge.kind == EdgeKind::Explicit {
                adjacency.entry(edge.dst.clone()).or_default().push(i);
            }
        }
        Self {
            template,
            trees,
            edges,
            build_params,
            adjacency,
        }
    }

    pub fn tree(&self, ticket_id: &str) -> Option<&TicketTree> {
        self.trees.get(ticket_id)
    }

    pub fn contains(&self, ticket_id: &str) -> bool {
        self.trees.contains_key(ticket_id)
    }

    pub fn node(&self, id: &NodeId) -> Option<&SectionNode> {
        self.trees.get(&id.ticket_id)?.node(&id.section)
    }

    pub fn ticket_count(&self) -> usize {
        self.trees.len()
    }

    /// Edges incident to `ticket_id`, paired with the ticket at the other end.
    /// Explicit edges are reported in both directions. Ordered by edge kind
    /// (explicit first), then neighbor id, then relation.
    pub fn neighbors(
        &self,
        ticket_id: &str,
        kind_filter: Option<EdgeKind>,
    ) -> Result<Vec<(&str, &InterTicketEdge)>> {
        if !self.trees.contains_key(ticket_id) {
            return Err(Error::TicketNotFound(ticket_id.to_string()));
        }
        let mut out: Vec<(&str, &InterTicketEdge)> = self
            .adjacency
            .get(ticket_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.edges[i])
            .filter(|e| kind_filter.is_none_or(|k| e.kind == k))
            .map(|e| {
                let other = if e.src == ticket_id { &e.dst } else { &e.src };
                (other.as_str(), e)
            })
            .filter(|(other, _)| self.trees.contains_key(*other))
            .collect();
        out.sort_by(|a, b| {
            (a.1.kind, a.0, &a.1.relation, &a.1.src).cmp(&(b.1.kind, b.0, &b.1.relation, &b.1.src))
        });
        Ok(out)
    }

    /// Unordered implicit pairs `(a, b)` with `a < b`.
    pub fn implicit_pairs(&self) -> BTreeSet<(String, String)> {
        self.edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Implicit)
            .map(|e| {
                if e.src < e.dst {
                    (e.src.clone(), e.dst.clone())
                } else {
                    (e.dst.clone(), e.src.clone())
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Ticket id, node id or edge the violation concerns.
    pub subject: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

fn edge_subject(e: &InterTicketEdge) -> String {
    format!("edge {} -[{}:{}]-> {}", e.src, e.kind, e.relation, e.dst)
}

/// Checks every structural invariant of the graph. Total: never fails, returns
/// an empty list for a well-formed graph.
pub fn validate_graph(graph: &KnowledgeGraph) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut push = |subject: String, rule: String| violations.push(Violation { subject, rule });

    for (key, tree) in &graph.trees {
        validate_tree(key, tree, &graph.template, &mut push);
    }

    let theta = graph.build_params.theta;
    let mut seen = BTreeSet::new();
    let mut implicit = BTreeMap::new();
    for edge in &graph.edges {
        let subject = edge_subject(edge);
        if edge.src == edge.dst {
            push(subject.clone(), "self-loop (src equals dst)".into());
        }
        for end in [&edge.src, &edge.dst] {
            if !graph.trees.contains_key(end) {
                push(subject.clone(), format!("endpoint {end} has no ticket tree"));
            }
        }
        if !seen.insert(edge.key()) {
            push(subject.clone(), "duplicate (src, dst, kind, relation)".into());
        }
        match edge.kind {
            EdgeKind::Explicit => {
                if edge.weight.is_some() {
                    push(subject.clone(), "explicit edge carries a weight".into());
                }
            }
            EdgeKind::Implicit => {
                if edge.relation != SIMILAR_TO {
                    push(subject.clone(), format!("implicit edge relation must be {SIMILAR_TO}"));
                }
                match edge.weight {
                    None => push(subject.clone(), "implicit edge without weight".into()),
                    Some(w) if !w.is_finite() || !(-1.0..=1.0).contains(&w) => {
                        push(subject.clone(), format!("weight {w} outside [-1, 1]"))
                    }
                    Some(w) if w < theta - SIMILARITY_EPSILON => {
                        push(subject.clone(), format!("weight {w} below theta {theta}"))
                    }
                    Some(w) => {
                        implicit.insert((edge.src.as_str(), edge.dst.as_str()), w);
                    }
                }
            }
        }
    }
    for (&(src, dst), &w) in &implicit {
        match implicit.get(&(dst, src)) {
            None => push(
                format!("implicit edge {src} -> {dst}"),
                format!("asymmetric: reverse edge {dst} -> {src} missing"),
            ),
            Some(&back) if back != w => push(
                format!("implicit edge {src} -> {dst}"),
                format!("asymmetric: reverse weight {back} differs from {w}"),
            ),
            _ => {}
        }
    }
    violations
}

fn validate_tree(
    key: &str,
    tree: &TicketTree,
    template: &GraphTemplate,
    push: &mut impl FnMut(String, String),
) {
    let subject = format!("ticket {key}");
    if tree.ticket_id != key {
        push(subject.clone(), format!("tree is keyed under a different id ({})", tree.ticket_id));
    }
    if tree.ticket_id.is_empty() {
        push(subject.clone(), "empty ticket id".into());
    }
    if tree.root.id != NodeId::new(&tree.ticket_id, ROOT_SECTION) {
        push(subject.clone(), format!("root node id {} is not ({}, {ROOT_SECTION})", tree.root.id, tree.ticket_id));
    }
    if tree.root.parent.is_some() {
        push(subject.clone(), "root node has a parent".into());
    }

    let mut sections = BTreeSet::new();
    for node in &tree.nodes {
        let node_subject = format!("node {}", node.id);
        if node.id.ticket_id != tree.ticket_id {
            push(node_subject.clone(), "node belongs to a different ticket".into());
        }
        if template.section(&node.id.section).is_none() {
            push(node_subject.clone(), "section is not in the template".into());
        }
        if !sections.insert(node.id.section.as_str()) {
            push(node_subject.clone(), "section appears more than once".into());
        }
        match &node.parent {
            None => push(node_subject.clone(), "non-root node without parent".into()),
            Some(parent) => {
                let exists = parent == &tree.root.id || tree.nodes.iter().any(|n| &n.id == parent);
                if !exists {
                    push(node_subject.clone(), format!("parent {parent} not in this ticket tree"));
                }
            }
        }
    }

    if tree.intra_edges.len() != tree.nodes.len() {
        push(
            subject.clone(),
            format!(
                "{} intra edges for {} nodes (a tree needs nodes - 1 = {})",
                tree.intra_edges.len(),
                tree.nodes.len() + 1,
                tree.nodes.len()
            ),
        );
    }
    let known = |id: &NodeId| id == &tree.root.id || tree.nodes.iter().any(|n| &n.id == id);
    let mut incoming: BTreeMap<&NodeId, usize> = BTreeMap::new();
    for edge in &tree.intra_edges {
        let edge_subject = format!("intra edge {} -> {}", edge.parent, edge.child);
        if !known(&edge.parent) || !known(&edge.child) {
            push(edge_subject.clone(), "endpoint not in this ticket tree".into());
        }
        if edge.relation != relation_label(&edge.child.section) {
            push(edge_subject.clone(), format!("relation label {} does not match child section", edge.relation));
        }
        if let Some(child) = tree.nodes.iter().find(|n| n.id == edge.child) {
            if child.parent.as_ref() != Some(&edge.parent) {
                push(edge_subject.clone(), "edge disagrees with the child's parent field".into());
            }
        }
        *incoming.entry(&edge.child).or_default() += 1;
    }
    if incoming.contains_key(&tree.root.id) {
        push(subject.clone(), "root node has an incoming edge".into());
    }
    for node in &tree.nodes {
        let count = incoming.get(&node.id).copied().unwrap_or(0);
        if count != 1 {
            push(format!("node {}", node.id), format!("{count} parents (expected exactly 1)"));
        }
    }

    // reachability from the root
    let mut reached = BTreeSet::from([&tree.root.id]);
    let mut queue = VecDeque::from([&tree.root.id]);
    while let Some(current) = queue.pop_front() {
        for edge in tree.intra_edges.iter().filter(|e| &e.parent == current) {
            if reached.insert(&edge.child) {
                queue.push_back(&edge.child);
            }
        }
    }
    for node in &tree.nodes {
        if !reached.contains(&node.id) {
            push(format!("node {}", node.id), "unreachable from root".into());
        }
    }
}
