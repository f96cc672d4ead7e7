//! Hybrid ticket parsing: rule-based extraction for predefined fields, then
//! template-guided generative parsing for the remaining free text.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::adapter::{extract_json_object, AdapterError, AdapterHandle, GenerationTask};
use crate::error::{Error, Result};
use crate::model::TicketTree;
use crate::template::{GraphTemplate, RuleDescriptor, DESCRIPTION, SUMMARY};

/// One ticket as exported from the tracker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTicket {
    pub ticket_id: String,
    pub title: String,
    #[serde(default)]
    pub body: String,
    /// Tracker-native references, relation label -> target ticket ids.
    #[serde(default)]
    pub link_fields: BTreeMap<String, Vec<String>>,
}

impl RawTicket {
    pub fn new(ticket_id: &str, title: &str, body: &str) -> Self {
        Self {
            ticket_id: ticket_id.to_string(),
            title: title.to_string(),
            body: body.to_string(),
            link_fields: BTreeMap::new(),
        }
    }

    pub fn with_link(mut self, relation: &str, target: &str) -> Self {
        self.link_fields
            .entry(relation.to_string())
            .or_default()
            .push(target.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub tree: TicketTree,
    /// Sections taken from the body by rule descriptors.
    pub rule_covered: Vec<String>,
    /// Sections attributed by the generative step (adapter or its fallback).
    pub generative_covered: Vec<String>,
    /// Sections populated from structured tracker fields (the title).
    pub field_covered: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleParse {
    pub sections: BTreeMap<String, String>,
    /// Byte ranges of `body` consumed by rules, sorted and disjoint.
    pub spans: Vec<Range<usize>>,
    pub warnings: Vec<String>,
}

impl RuleParse {
    /// `body` with every consumed span cut out.
    pub fn residual(&self, body: &str) -> String {
        let mut out = String::with_capacity(body.len());
        let mut cursor = 0;
        for span in &self.spans {
            out.push_str(&body[cursor..span.start]);
            cursor = span.end;
        }
        out.push_str(&body[cursor..]);
        out
    }
}

/// Lines of `text` with their byte offsets; each slice keeps its newline.
fn lines_with_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |line| {
        let start = offset;
        offset += line.len();
        (start, line)
    })
}

fn strip_eol(line: &str) -> &str {
    line.strip_suffix('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .unwrap_or(line)
}

/// Extracts the rule-driven sections: fenced blocks first, then `prefix:`
/// field lines outside those blocks.
pub fn rule_parse(ticket: &RawTicket, template: &GraphTemplate) -> RuleParse {
    let body = ticket.body.as_str();
    let mut out = RuleParse::default();
    let lines: Vec<(usize, &str)> = lines_with_offsets(body).collect();

    for spec in &template.sections {
        let Some(RuleDescriptor::FencedBlock { marker }) = spec.rule_descriptor() else {
            continue;
        };
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < lines.len() {
            let (start, line) = lines[i];
            if !line.trim_start().starts_with(marker.as_str()) || inside(&out.spans, start) {
                i += 1;
                continue;
            }
            let close = (i + 1..lines.len()).find(|&j| strip_eol(lines[j].1).trim() == marker);
            match close {
                Some(j) => {
                    let content_start = start + line.len();
                    let content_end = if j > i + 1 {
                        let (last_start, last) = lines[j - 1];
                        last_start + strip_eol(last).len()
                    } else {
                        content_start
                    };
                    blocks.push(body[content_start..content_end.max(content_start)].to_string());
                    let (close_start, close_line) = lines[j];
                    out.spans.push(start..close_start + close_line.len());
                    i = j + 1;
                }
                None => {
                    out.warnings.push(format!(
                        "{}: unterminated {marker} block for section {:?} at byte {start}",
                        ticket.ticket_id, spec.name
                    ));
                    break;
                }
            }
        }
        let blocks: Vec<String> = blocks.into_iter().filter(|b| !b.trim().is_empty()).collect();
        if !blocks.is_empty() {
            out.sections.insert(spec.name.clone(), blocks.join("\n"));
        }
    }

    for spec in &template.sections {
        let Some(RuleDescriptor::FieldPrefix { prefix }) = spec.rule_descriptor() else {
            continue;
        };
        for &(start, line) in &lines {
            if inside(&out.spans, start) {
                continue;
            }
            let Some(value) = field_value(strip_eol(line), prefix) else {
                continue;
            };
            if value.is_empty() {
                out.warnings.push(format!(
                    "{}: empty value for field {prefix:?} at byte {start}",
                    ticket.ticket_id
                ));
                continue;
            }
            if out.sections.contains_key(&spec.name) {
                out.warnings.push(format!(
                    "{}: repeated field {prefix:?} at byte {start} ignored",
                    ticket.ticket_id
                ));
                continue;
            }
            out.sections.insert(spec.name.clone(), value.to_string());
            out.spans.push(start..start + line.len());
        }
    }

    out.spans.sort_by_key(|r| r.start);
    out
}

fn inside(spans: &[Range<usize>], pos: usize) -> bool {
    spans.iter().any(|s| s.contains(&pos))
}

/// `"Priority: Major"` with prefix `priority` -> `Some("Major")`.
fn field_value<'a>(line: &'a str, prefix: &str) -> Option<&'a str> {
    let trimmed = line.trim_start();
    let head = trimmed.get(..prefix.len())?;
    if !head.eq_ignore_ascii_case(prefix) {
        return None;
    }
    let rest = trimmed[prefix.len()..].trim_start();
    let value = rest.strip_prefix(':')?;
    Some(value.trim())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerativeParse {
    pub sections: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    pub used_fallback: bool,
}

pub fn ticket_prompt(text: &str, template: &GraphTemplate) -> String {
    let allowed: Vec<&str> = template
        .sections
        .iter()
        .filter(|s| !s.is_rule())
        .map(|s| s.name.as_str())
        .collect();
    format!(
        "Split the issue ticket text below into sections.\n\
         Allowed section names: {}.\n\
         Respond with one JSON object mapping each section name that occurs in the text \
         to its verbatim content. Omit sections that do not occur. No commentary.\n\n\
         Ticket text:\n{text}",
        allowed.join(", ")
    )
}

/// Parses the residual free text into template sections, through the adapter
/// when one is given, else (or on adapter failure) by heading segmentation.
pub fn generative_parse(
    residual: &str,
    template: &GraphTemplate,
    adapter: Option<&AdapterHandle>,
) -> GenerativeParse {
    let mut out = GenerativeParse::default();
    if residual.trim().is_empty() {
        return out;
    }
    if let Some(adapter) = adapter {
        let context = serde_json::json!({
            "text": residual,
            "sections": template.sections.iter().filter(|s| !s.is_rule()).map(|s| &s.name).collect::<Vec<_>>(),
        });
        let reply = adapter
            .call(GenerationTask::ParseTicket, ticket_prompt(residual, template), context)
            .and_then(|text| sections_from_reply(&text));
        match reply {
            Ok(raw) => {
                for (key, value) in raw {
                    match template.resolve(&key) {
                        Some(spec) if !spec.is_rule() => {
                            let value = value.trim();
                            if value.is_empty() {
                                continue;
                            }
                            if out.sections.contains_key(&spec.name) {
                                out.warnings.push(format!("adapter repeated section {:?}; kept first", spec.name));
                                continue;
                            }
                            out.sections.insert(spec.name.clone(), value.to_string());
                        }
                        Some(spec) => out.warnings.push(format!(
                            "adapter returned rule-extracted section {:?}; dropped",
                            spec.name
                        )),
                        None => out.warnings.push(format!("adapter returned unknown section {key:?}; dropped")),
                    }
                }
                return out;
            }
            Err(err) => out
                .warnings
                .push(format!("adapter {} failed ({err}); used heading segmentation", adapter.name())),
        }
    }
    out.used_fallback = true;
    out.sections = segment_by_headings(residual, template);
    out
}

fn sections_from_reply(text: &str) -> Result<Vec<(String, String)>, AdapterError> {
    let value = extract_json_object(text)?;
    let obj = value.as_object().expect("extract_json_object returns objects");
    obj.iter()
        .map(|(k, v)| match v.as_str() {
            Some(s) => Ok((k.clone(), s.to_string())),
            None => Err(AdapterError::Malformed(format!("section {k:?} is not a string"))),
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Marker<'t> {
    /// Start of the heading text.
    heading: usize,
    /// Start of the section content.
    content: usize,
    /// The heading appeared mid-line after a sentence terminator.
    inline: bool,
    section: &'t str,
}

/// Matches a section name at the start of `s`, treating `_`/`-` as spaces.
/// Returns the byte length consumed.
fn match_name(s: &str, name: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    if bytes.len() < name.len() {
        return None;
    }
    for (b, n) in bytes.iter().zip(name.as_bytes()) {
        let ok = if *n == b' ' {
            matches!(b, b' ' | b'_' | b'-')
        } else {
            b.to_ascii_lowercase() == *n
        };
        if !ok {
            return None;
        }
    }
    // word boundary
    match bytes.get(name.len()) {
        Some(c) if c.is_ascii_alphanumeric() => None,
        _ => Some(name.len()),
    }
}

fn heading_at<'t>(s: &str, names: &[(String, &'t str)]) -> Option<(usize, &'t str)> {
    names
        .iter()
        .find_map(|(name, section)| match_name(s, name).map(|len| (len, *section)))
}

/// Deterministic segmentation on section headings. Recognizes lines that
/// start with a known section name followed by `:` (content may follow on the
/// same line), standalone heading lines (optionally markdown-decorated), and
/// `Name:` headings that follow a sentence terminator mid-line. Text before
/// the first heading is treated as description.
pub fn segment_by_headings(text: &str, template: &GraphTemplate) -> BTreeMap<String, String> {
    let names: Vec<(String, &str)> = template
        .names_and_aliases()
        .into_iter()
        .filter(|(_, section)| template.section(section).is_some_and(|s| !s.is_rule()))
        .collect();

    let mut markers: Vec<Marker> = Vec::new();
    for (offset, raw_line) in lines_with_offsets(text) {
        let line = strip_eol(raw_line);
        let lead = line.len() - line.trim_start_matches(|c: char| c.is_whitespace() || c == '#' || c == '*').len();
        let mut search_from = 0;
        if let Some((len, section)) = heading_at(&line[lead..], &names) {
            let after = &line[lead + len..];
            let after_trim = after.trim_start_matches(['*', ' ', '\t']);
            if let Some(inline) = after_trim.strip_prefix(':') {
                let content = offset + line.len() - inline.len();
                markers.push(Marker { heading: offset, content, inline: false, section });
                search_from = content - offset;
            } else if after_trim.trim_end_matches([':', '*']).trim().is_empty() {
                markers.push(Marker { heading: offset, content: offset + raw_line.len(), inline: false, section });
                continue;
            }
        }
        // inline headings after sentence terminators
        let mut pos = search_from;
        while let Some(rel) = line[pos..].find(['.', ';', '!', '?']) {
            let term = pos + rel;
            let rest = &line[term + 1..];
            let ws = rest.len() - rest.trim_start().len();
            pos = term + 1;
            if ws == 0 {
                continue;
            }
            let start = term + 1 + ws;
            if let Some((len, section)) = heading_at(&line[start..], &names) {
                let after = line[start + len..].trim_start_matches([' ', '\t']);
                if let Some(inline) = after.strip_prefix(':') {
                    let content = offset + line.len() - inline.len();
                    markers.push(Marker { heading: offset + start, content, inline: true, section });
                    pos = content - offset;
                }
            }
        }
    }

    let mut out: BTreeMap<String, String> = BTreeMap::new();
    let mut push = |section: &str, piece: &str| {
        let piece = piece.trim();
        if piece.is_empty() {
            return;
        }
        out.entry(section.to_string())
            .and_modify(|existing| {
                existing.push('\n');
                existing.push_str(piece);
            })
            .or_insert_with(|| piece.to_string());
    };

    let first = markers.first().map_or(text.len(), |m| m.heading);
    let preamble = &text[..first];
    if template.section(DESCRIPTION).is_some() {
        push(DESCRIPTION, preamble);
    }
    for (i, marker) in markers.iter().enumerate() {
        let (end, next_inline) = markers
            .get(i + 1)
            .map_or((text.len(), false), |next| (next.heading, next.inline));
        let mut piece = text[marker.content..end].trim_end();
        if next_inline {
            piece = piece.strip_suffix(['.', ';', '!', '?']).unwrap_or(piece);
        }
        push(marker.section, piece);
    }
    out
}

/// Full hybrid parse of one ticket into its section tree.
pub fn parse_ticket(
    ticket: &RawTicket,
    template: &GraphTemplate,
    adapter: Option<&AdapterHandle>,
) -> Result<ParseOutcome> {
    if ticket.ticket_id.trim().is_empty() {
        return Err(Error::InvalidTicket("empty ticket_id".into()));
    }
    if ticket.ticket_id.trim() != ticket.ticket_id || ticket.ticket_id.contains(char::is_control) {
        return Err(Error::InvalidTicket(format!(
            "ticket_id {:?} has surrounding whitespace or control characters",
            ticket.ticket_id
        )));
    }

    let rules = rule_parse(ticket, template);
    let residual = rules.residual(&ticket.body);
    let generative = generative_parse(&residual, template, adapter);

    let mut sections = rules.sections.clone();
    let rule_covered: Vec<String> = rules.sections.keys().cloned().collect();
    let mut generative_covered = Vec::new();
    let mut warnings = rules.warnings;
    warnings.extend(generative.warnings);
    for (name, text) in generative.sections {
        if sections.contains_key(&name) {
            warnings.push(format!("section {name:?} already extracted by rules; generative copy dropped"));
            continue;
        }
        generative_covered.push(name.clone());
        sections.insert(name, text);
    }

    let mut field_covered = Vec::new();
    let title = ticket.title.trim();
    if !sections.contains_key(SUMMARY) && !title.is_empty() && template.section(SUMMARY).is_some() {
        sections.insert(SUMMARY.to_string(), title.to_string());
        field_covered.push(SUMMARY.to_string());
    }

    let tree = TicketTree::from_sections(&ticket.ticket_id, title, &sections, template);
    Ok(ParseOutcome {
        tree,
        rule_covered,
        generative_covered,
        field_covered,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{GenerationRequest, TextGenerationAdapter};
    use std::sync::Arc;
    use std::time::Duration;

    struct Fixed(Result<String, AdapterError>);

    impl TextGenerationAdapter for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn generate(&self, _: &GenerationRequest) -> Result<String, AdapterError> {
            self.0.clone()
        }
    }

    fn handle(reply: Result<String, AdapterError>) -> AdapterHandle {
        AdapterHandle::new(Arc::new(Fixed(reply)), Duration::from_secs(5))
    }

    fn tpl() -> GraphTemplate {
        GraphTemplate::standard()
    }

    #[test]
    fn field_prefix_rule() {
        let t = RawTicket::new("A-1", "t", "Some text\nPriority: Major\nmore");
        let parsed = rule_parse(&t, &tpl());
        assert_eq!(parsed.sections.get("priority").map(String::as_str), Some("Major"));
        assert_eq!(parsed.residual(&t.body), "Some text\nmore");
    }

    #[test]
    fn empty_body_has_no_rule_sections() {
        let t = RawTicket::new("A-1", "t", "");
        assert!(rule_parse(&t, &tpl()).sections.is_empty());
    }

    #[test]
    fn fenced_blocks_concatenate_in_order() {
        let body = "intro\n```sql\nSELECT 1;\n```\nmiddle\n```\nprintln!(\"two\");\n```\nend";
        let t = RawTicket::new("A-1", "t", body);
        let parsed = rule_parse(&t, &tpl());
        let code = parsed.sections.get("code").unwrap();
        assert_eq!(code, "SELECT 1;\nprintln!(\"two\");");
        let first = code.find("SELECT 1;").unwrap();
        let second = code.find("println!").unwrap();
        assert!(first < second);
        for block in code.split('\n') {
            assert!(body.contains(block));
        }
        assert_eq!(parsed.residual(body), "intro\nmiddle\nend");
    }

    #[test]
    fn field_inside_fence_is_not_a_field() {
        let body = "```\nPriority: Low\n```\nPriority: High";
        let parsed = rule_parse(&RawTicket::new("A", "t", body), &tpl());
        assert_eq!(parsed.sections["priority"], "High");
        assert_eq!(parsed.sections["code"], "Priority: Low");
    }

    #[test]
    fn unterminated_fence_warns() {
        let parsed = rule_parse(&RawTicket::new("A", "t", "```\nno close"), &tpl());
        assert!(!parsed.sections.contains_key("code"));
        assert_eq!(parsed.warnings.len(), 1);
    }

    #[test]
    fn repeated_and_empty_fields_warn() {
        let parsed = rule_parse(&RawTicket::new("A", "t", "Priority:\nPriority: P1\npriority : P2"), &tpl());
        assert_eq!(parsed.sections["priority"], "P1");
        assert_eq!(parsed.warnings.len(), 2);
    }

    #[test]
    fn identity_adapter_map_is_returned_verbatim() {
        let reply = r#"{"description": "Upload fails", "fix solution": "Trim the header row"}"#;
        let out = generative_parse("whatever", &tpl(), Some(&handle(Ok(reply.into()))));
        assert!(!out.used_fallback);
        assert_eq!(out.sections["description"], "Upload fails");
        assert_eq!(out.sections["fix solution"], "Trim the header row");
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn unknown_adapter_keys_are_dropped() {
        let reply = r#"{"foobar": "x", "Steps_To_Reproduce": "1. go"}"#;
        let out = generative_parse("whatever", &tpl(), Some(&handle(Ok(reply.into()))));
        assert!(!out.sections.contains_key("foobar"));
        assert_eq!(out.sections["steps to reproduce"], "1. go");
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("foobar"));
    }

    #[test]
    fn adapter_failure_falls_back_to_headings() {
        let out = generative_parse(
            "Description: A. Fix Solution: B",
            &tpl(),
            Some(&handle(Err(AdapterError::Timeout(Duration::from_millis(1))))),
        );
        assert!(out.used_fallback);
        let expected: BTreeMap<String, String> = [("description", "A"), ("fix solution", "B")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        assert_eq!(out.sections, expected);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn malformed_adapter_output_falls_back() {
        let out = generative_parse("Fix: restart", &tpl(), Some(&handle(Ok("sure thing!".into()))));
        assert!(out.used_fallback);
        assert_eq!(out.sections["fix solution"], "restart");
    }

    #[test]
    fn standalone_heading_lines() {
        let text = "The upload breaks.\n\n## Steps to Reproduce\n1. open\n2. upload\n\n**Fix Solution**\nRe-run the job.\n";
        let out = segment_by_headings(text, &tpl());
        assert_eq!(out["description"], "The upload breaks.");
        assert_eq!(out["steps to reproduce"], "1. open\n2. upload");
        assert_eq!(out["fix solution"], "Re-run the job.");
    }

    #[test]
    fn heading_words_inside_sentences_do_not_split() {
        let text = "Description: the fix solution is unknown. We tried a fix for it";
        let out = segment_by_headings(text, &tpl());
        assert_eq!(out.len(), 1);
        assert_eq!(out["description"], text["Description: ".len()..]);
    }

    #[test]
    fn title_only_ticket() {
        let out = parse_ticket(&RawTicket::new("A-1", "Login broken", ""), &tpl(), None).unwrap();
        assert_eq!(out.tree.nodes.len(), 1);
        assert_eq!(out.tree.section_text("summary"), Some("Login broken"));
        assert_eq!(out.field_covered, vec!["summary"]);
    }

    #[test]
    fn empty_id_is_rejected() {
        assert!(parse_ticket(&RawTicket::new("", "x", ""), &tpl(), None).is_err());
        assert!(parse_ticket(&RawTicket::new(" A", "x", ""), &tpl(), None).is_err());
    }

    #[test]
    fn body_summary_wins_over_title() {
        let out = parse_ticket(&RawTicket::new("A", "Title", "Summary: from body"), &tpl(), None).unwrap();
        assert_eq!(out.tree.section_text("summary"), Some("from body"));
        assert_eq!(out.generative_covered, vec!["summary"]);
    }

    #[test]
    fn long_gap_between_description_and_fix() {
        let filler: Vec<String> = (0..3000).map(|i| format!("word{i}")).collect();
        let description = format!("Uploads time out for large files. {}", filler.join(" "));
        let fix = "Raise the proxy read timeout to 120 seconds and retry the upload.";
        let body = format!("Description:\n{description}\nFix Solution:\n{fix}\n");
        let out = parse_ticket(&RawTicket::new("A", "Upload timeout", &body), &tpl(), None).unwrap();
        assert_eq!(out.tree.section_text("description"), Some(description.as_str()));
        assert_eq!(out.tree.section_text("fix solution"), Some(fix));
    }

    #[test]
    fn coverage_is_a_partition() {
        let body = "Priority: Minor\nDescription: broken\n```\ncode\n```\nFix: patch";
        let out = parse_ticket(&RawTicket::new("A", "T", body), &tpl(), None).unwrap();
        for name in &out.rule_covered {
            assert!(!out.generative_covered.contains(name));
        }
        assert_eq!(out.rule_covered, vec!["code", "priority"]);
        assert_eq!(out.generative_covered, vec!["description", "fix solution"]);
    }
}
