//! Structured subgraph queries: which tickets to anchor on and which
//! relation paths to follow inside their trees.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::adapter::{extract_json_object, AdapterError, AdapterHandle, GenerationTask};
use crate::error::{Error, Result};
use crate::model::{KnowledgeGraph, NodeId, SectionNode, TicketTree};
use crate::query::parse::QueryParse;
use crate::template::{relation_label, GraphTemplate, FIX_SOLUTION, STEPS_TO_REPRODUCE, SUMMARY};

/// Sections returned when a query states no intent.
pub const DEFAULT_RETURN_SECTIONS: [&str; 2] = [SUMMARY, FIX_SOLUTION];

/// One relation path from the ticket root, ending at the section it returns.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Traversal {
    pub path: Vec<String>,
    pub returns: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerSource {
    Adapter,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphQueryPlan {
    pub rewritten_query: String,
    pub anchor_tickets: Vec<String>,
    pub traversals: Vec<Traversal>,
    pub planner: PlannerSource,
}

impl GraphQueryPlan {
    pub fn return_sections(&self) -> BTreeSet<&str> {
        self.traversals.iter().map(|t| t.returns.as_str()).collect()
    }

    /// Cypher-like text of the plan, for logs and display.
    pub fn render(&self) -> String {
        let quoted: Vec<String> = self
            .anchor_tickets
            .iter()
            .map(|id| format!("'{}'", id.replace('\\', "\\\\").replace('\'', "\\'")))
            .collect();
        let hops = |t: &Traversal| -> (String, String) {
            let mut pattern = String::new();
            let mut last = "t".to_string();
            for label in &t.path {
                let section = label.strip_prefix("HAS_").unwrap_or(label).to_ascii_lowercase();
                last = section.clone();
                pattern.push_str(&format!("-[:{label}]->({section}:{})", type_name(&section)));
            }
            (pattern, last)
        };
        if self.anchor_tickets.len() == 1 && self.traversals.len() == 1 {
            let (pattern, last) = hops(&self.traversals[0]);
            return format!(
                "MATCH (t:Ticket {{ticket_ID: {}}}){pattern} RETURN {last}.value",
                quoted[0]
            );
        }
        let mut lines = vec![if quoted.len() == 1 {
            format!("MATCH (t:Ticket {{ticket_ID: {}}})", quoted[0])
        } else {
            format!("MATCH (t:Ticket) WHERE t.ticket_ID IN [{}]", quoted.join(", "))
        }];
        let mut returns = vec!["t.ticket_ID".to_string()];
        for t in &self.traversals {
            let (pattern, last) = hops(t);
            lines.push(format!("OPTIONAL MATCH (t){pattern}"));
            returns.push(format!("{last}.value"));
        }
        lines.push(format!("RETURN {}", returns.join(", ")));
        lines.join("\n")
    }
}

/// `steps to reproduce` -> `StepsToReproduce`.
fn type_name(var: &str) -> String {
    var.split('_')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let mut c = p.chars();
            c.next()
                .map(|f| f.to_ascii_uppercase().to_string() + c.as_str())
                .unwrap_or_default()
        })
        .collect()
}

/// One traversal per intent, following the template lineage of the section.
/// Intents naming no template section are skipped.
pub fn deterministic_traversals(intents: &[String], template: &GraphTemplate) -> Vec<Traversal> {
    let defaults: Vec<String>;
    let wanted: &[String] = if intents.is_empty() {
        defaults = DEFAULT_RETURN_SECTIONS.iter().map(|s| s.to_string()).collect();
        &defaults
    } else {
        intents
    };
    let mut out: Vec<Traversal> = wanted
        .iter()
        .filter_map(|intent| {
            let spec = template.resolve(intent)?;
            Some(Traversal {
                path: template.path_to(&spec.name)?,
                returns: spec.name.clone(),
            })
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

fn intent_phrase(section: &str) -> String {
    match section {
        STEPS_TO_REPRODUCE => "how to reproduce".into(),
        FIX_SOLUTION => "how to fix".into(),
        other => format!("what is the {other} of"),
    }
}

/// Restates the query around the anchor ids, e.g. `how to reproduce 'ENT-22970'`.
pub fn rewrite_query(traversals: &[Traversal], anchors: &[String]) -> String {
    let ids = anchors.iter().map(|a| format!("'{a}'")).collect::<Vec<_>>().join(", ");
    let mut phrases: Vec<String> = traversals.iter().map(|t| intent_phrase(&t.returns)).collect();
    phrases.dedup();
    format!("{} {ids}", phrases.join(" and "))
}

/// Checks an externally proposed traversal against the template: every label
/// must be known, the labels must follow the returned section's lineage in
/// order, and the path must end at that section.
pub fn validate_traversal(t: &Traversal, template: &GraphTemplate) -> std::result::Result<(), String> {
    let vocabulary = template.relation_vocabulary();
    if let Some(bad) = t.path.iter().find(|l| !vocabulary.contains(*l)) {
        return Err(format!("unknown relation {bad:?}"));
    }
    let lineage = template
        .lineage(&t.returns)
        .ok_or_else(|| format!("unknown return section {:?}", t.returns))?;
    if t.path.last() != Some(&relation_label(&t.returns)) {
        return Err(format!("path does not end at {:?}", t.returns));
    }
    let labels: Vec<String> = lineage.into_iter().map(relation_label).collect();
    let mut remaining = labels.iter();
    for label in &t.path {
        if !remaining.any(|l| l == label) {
            return Err(format!("relation {label:?} is off the lineage of {:?}", t.returns));
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct AdapterPlanReply {
    traversals: Vec<Traversal>,
}

fn adapter_traversals(
    intents: &[String],
    anchors: &[String],
    template: &GraphTemplate,
    adapter: &AdapterHandle,
) -> std::result::Result<Vec<Traversal>, AdapterError> {
    let vocabulary: Vec<String> = template.relation_vocabulary().into_iter().collect();
    let prompt = format!(
        "Translate the request into traversals over a ticket tree.\n\
         Relations: {}.\n\
         Respond with JSON {{\"traversals\": [{{\"path\": [relation, ...], \"returns\": section}}]}}.\n\
         Sections requested: {}.\nTickets: {}.",
        vocabulary.join(", "),
        intents.join(", "),
        anchors.join(", ")
    );
    let text = adapter.call(
        GenerationTask::PlanQuery,
        prompt,
        serde_json::json!({ "intents": intents, "anchors": anchors, "relations": vocabulary }),
    )?;
    let reply: AdapterPlanReply = serde_json::from_value(extract_json_object(&text)?)
        .map_err(|e| AdapterError::Malformed(e.to_string()))?;
    if reply.traversals.is_empty() {
        return Err(AdapterError::Malformed("plan has no traversals".into()));
    }
    for t in &reply.traversals {
        validate_traversal(t, template).map_err(AdapterError::Malformed)?;
    }
    let mut traversals = reply.traversals;
    traversals.sort();
    traversals.dedup();
    Ok(traversals)
}

/// Builds the plan for `anchors`. The adapter plan is used when it validates;
/// otherwise the deterministic planner is used and a warning returned.
pub fn plan_subgraph_query(
    parse: &QueryParse,
    anchors: &[String],
    template: &GraphTemplate,
    adapter: Option<&AdapterHandle>,
) -> Result<(GraphQueryPlan, Vec<String>)> {
    let mut anchor_tickets: Vec<String> = Vec::with_capacity(anchors.len());
    for a in anchors {
        if !anchor_tickets.contains(a) {
            anchor_tickets.push(a.clone());
        }
    }
    if anchor_tickets.is_empty() {
        return Err(Error::Plan("no anchor tickets".into()));
    }
    let intents: Vec<String> = parse.intents.iter().cloned().collect();
    let mut warnings = Vec::new();
    let mut chosen = None;
    if let Some(adapter) = adapter {
        match adapter_traversals(&intents, &anchor_tickets, template, adapter) {
            Ok(t) => chosen = Some((t, PlannerSource::Adapter)),
            Err(err) => warnings.push(format!("adapter plan rejected ({err}); used deterministic planner")),
        }
    }
    let (traversals, planner) = match chosen {
        Some(c) => c,
        None => {
            let t = deterministic_traversals(&intents, template);
            if t.is_empty() {
                return Err(Error::Plan(format!("no template path for intents {intents:?}")));
            }
            (t, PlannerSource::Deterministic)
        }
    };
    Ok((
        GraphQueryPlan {
            rewritten_query: rewrite_query(&traversals, &anchor_tickets),
            anchor_tickets,
            traversals,
            planner,
        },
        warnings,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlanRow {
    pub ticket_id: String,
    pub section: String,
    pub text: String,
}

/// First node below `from` reached over an edge labelled `relation`.
fn descend<'a>(tree: &'a TicketTree, from: &NodeId, relation: &str) -> Option<&'a SectionNode> {
    let mut queue = VecDeque::from([from.clone()]);
    while let Some(parent) = queue.pop_front() {
        for edge in tree.intra_edges.iter().filter(|e| e.parent == parent) {
            if edge.relation == relation {
                return tree.node(&edge.child.section);
            }
            queue.push_back(edge.child.clone());
        }
    }
    None
}

/// Walks each traversal from every anchor's root. A relation whose node the
/// ticket lacks is stepped over; a missing final node yields no row.
pub fn execute_plan(plan: &GraphQueryPlan, graph: &KnowledgeGraph) -> Result<Vec<PlanRow>> {
    let mut rows = Vec::new();
    for anchor in &plan.anchor_tickets {
        let tree = graph
            .tree(anchor)
            .ok_or_else(|| Error::Execution(format!("anchor ticket {anchor} is not in the graph")))?;
        let mut found: Vec<PlanRow> = Vec::new();
        for t in &plan.traversals {
            let mut at = tree.root.id.clone();
            let mut reached = None;
            for (i, label) in t.path.iter().enumerate() {
                match descend(tree, &at, label) {
                    Some(node) => {
                        at = node.id.clone();
                        if i + 1 == t.path.len() {
                            reached = Some(node);
                        }
                    }
                    None => continue,
                }
            }
            if let Some(node) = reached.filter(|n| n.id.section == t.returns) {
                found.push(PlanRow {
                    ticket_id: anchor.clone(),
                    section: node.id.section.clone(),
                    text: node.text.clone(),
                });
            }
        }
        found.sort_by(|a, b| a.section.cmp(&b.section));
        found.dedup_by(|a, b| a.section == b.section);
        rows.extend(found);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::Arc;
    use std::time::Duration;

    use super::*;
    use crate::adapter::{GenerationRequest, TextGenerationAdapter};
    use crate::model::BuildParams;
    use crate::query::parse::ParseSource;

    fn tpl() -> GraphTemplate {
        GraphTemplate::standard()
    }

    fn parse_with(intents: &[&str]) -> QueryParse {
        QueryParse {
            raw_query: "q".into(),
            entities: BTreeMap::from([("summary".to_string(), "x".to_string())]),
            intents: intents.iter().map(|s| s.to_string()).collect(),
            ticket_refs: vec![],
            source: ParseSource::Lexicon,
            warnings: vec![],
        }
    }

    fn tree(id: &str, sections: &[(&str, &str)]) -> TicketTree {
        let map = sections.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        TicketTree::from_sections(id, id, &map, &tpl())
    }

    fn graph(trees: Vec<TicketTree>) -> KnowledgeGraph {
        KnowledgeGraph::new(
            tpl(),
            trees.into_iter().map(|t| (t.ticket_id.clone(), t)).collect(),
            vec![],
            BuildParams { theta: 0.75, embedder_fingerprint: "x".into(), implicit_basis: "title".into(), implicit_cap: None },
        )
    }

    #[test]
    fn reproduce_plan_matches_expected_rendering() {
        let (plan, warnings) = plan_subgraph_query(&parse_with(&["steps to reproduce"]), &["ENT-22970".into()], &tpl(), None).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(plan.traversals[0].path, vec!["HAS_DESCRIPTION", "HAS_STEPS_TO_REPRODUCE"]);
        assert_eq!(plan.rewritten_query, "how to reproduce 'ENT-22970'");
        assert_eq!(
            plan.render(),
            "MATCH (t:Ticket {ticket_ID: 'ENT-22970'})-[:HAS_DESCRIPTION]->(description:Description)\
             -[:HAS_STEPS_TO_REPRODUCE]->(steps_to_reproduce:StepsToReproduce) RETURN steps_to_reproduce.value"
        );
    }

    #[test]
    fn empty_intents_default_sections() {
        let (plan, _) = plan_subgraph_query(&parse_with(&[]), &["A".into()], &tpl(), None).unwrap();
        assert_eq!(plan.return_sections(), BTreeSet::from(["fix solution", "summary"]));
        assert!(plan.render().contains("OPTIONAL MATCH"));
    }

    #[test]
    fn no_anchor_is_a_plan_error() {
        assert!(matches!(plan_subgraph_query(&parse_with(&[]), &[], &tpl(), None), Err(Error::Plan(_))));
    }

    #[test]
    fn execution_returns_full_text_and_skips_missing() {
        let long_fix = "apply the patch ".repeat(500);
        let g = graph(vec![
            tree("A", &[("summary", "s"), ("description", "d"), ("steps to reproduce", "click"), ("fix solution", &long_fix)]),
            tree("B", &[("summary", "s2")]),
        ]);
        let (plan, _) = plan_subgraph_query(&parse_with(&["fix solution", "steps to reproduce"]), &["A".into()], &tpl(), None).unwrap();
        let rows = execute_plan(&plan, &g).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].section, "fix solution");
        assert_eq!(rows[0].text, long_fix);
        assert_eq!(rows[1].text, "click");

        let (plan_b, _) = plan_subgraph_query(&parse_with(&["fix solution"]), &["B".into()], &tpl(), None).unwrap();
        assert!(execute_plan(&plan_b, &g).unwrap().is_empty());
    }

    #[test]
    fn steps_without_description_are_still_reached() {
        let g = graph(vec![tree("A", &[("steps to reproduce", "click twice")])]);
        let (plan, _) = plan_subgraph_query(&parse_with(&["steps to reproduce"]), &["A".into()], &tpl(), None).unwrap();
        assert_eq!(execute_plan(&plan, &g).unwrap()[0].text, "click twice");
    }

    #[test]
    fn multi_anchor_equals_union_of_single_runs() {
        let g = graph(vec![
            tree("A", &[("fix solution", "fa"), ("summary", "sa")]),
            tree("B", &[("fix solution", "fb")]),
        ]);
        let p = parse_with(&[]);
        let (both, _) = plan_subgraph_query(&p, &["B".into(), "A".into()], &tpl(), None).unwrap();
        assert!(both.render().contains("WHERE t.ticket_ID IN ['B', 'A']"));
        let union = execute_plan(&both, &g).unwrap();
        let mut separate = Vec::new();
        for id in ["B", "A"] {
            let (single, _) = plan_subgraph_query(&p, &[id.into()], &tpl(), None).unwrap();
            separate.extend(execute_plan(&single, &g).unwrap());
        }
        assert_eq!(union, separate);
        assert_eq!(union[0].ticket_id, "B");
    }

    #[test]
    fn missing_anchor_fails_execution() {
        let (plan, _) = plan_subgraph_query(&parse_with(&[]), &["ZZ-1".into()], &tpl(), None).unwrap();
        assert!(matches!(execute_plan(&plan, &graph(vec![])), Err(Error::Execution(_))));
    }

    struct Fixed(&'static str);
    impl TextGenerationAdapter for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn generate(&self, _: &GenerationRequest) -> std::result::Result<String, AdapterError> {
            Ok(self.0.to_string())
        }
    }

    fn handle(text: &'static str) -> AdapterHandle {
        AdapterHandle::new(Arc::new(Fixed(text)), Duration::from_secs(5))
    }

    #[test]
    fn unknown_relation_falls_back_to_deterministic() {
        let h = handle(r#"{"traversals": [{"path": ["HAS_BOGUS"], "returns": "fix solution"}]}"#);
        let (plan, warnings) = plan_subgraph_query(&parse_with(&["fix solution"]), &["A".into()], &tpl(), Some(&h)).unwrap();
        assert_eq!(plan.planner, PlannerSource::Deterministic);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn valid_adapter_plan_is_used() {
        let h = handle(r#"{"traversals": [{"path": ["HAS_STEPS_TO_REPRODUCE"], "returns": "steps to reproduce"}]}"#);
        let (plan, warnings) = plan_subgraph_query(&parse_with(&["steps to reproduce"]), &["A".into()], &tpl(), Some(&h)).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(plan.planner, PlannerSource::Adapter);
        let g = graph(vec![tree("A", &[("description", "d"), ("steps to reproduce", "s")])]);
        assert_eq!(execute_plan(&plan, &g).unwrap()[0].text, "s");
    }

    #[test]
    fn traversal_validation() {
        let ok = Traversal { path: vec!["HAS_DESCRIPTION".into(), "HAS_STEPS_TO_REPRODUCE".into()], returns: "steps to reproduce".into() };
        assert!(validate_traversal(&ok, &tpl()).is_ok());
        let reversed = Traversal { path: vec!["HAS_STEPS_TO_REPRODUCE".into(), "HAS_DESCRIPTION".into()], returns: "steps to reproduce".into() };
        assert!(validate_traversal(&reversed, &tpl()).is_err());
        let off = Traversal { path: vec!["HAS_SUMMARY".into(), "HAS_FIX_SOLUTION".into()], returns: "fix solution".into() };
        assert!(validate_traversal(&off, &tpl()).is_err());
    }
}
