//! Query understanding: entity map (section -> value mentioned in the query)
//! and intent set (sections the query wants back).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::adapter::{extract_json_object, AdapterError, AdapterHandle, GenerationTask};
use crate::error::{Error, Result};
use crate::template::{
    GraphTemplate, DESCRIPTION, FIX_SOLUTION, PRIORITY, STEPS_TO_REPRODUCE, SUMMARY,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseSource {
    Adapter,
    Lexicon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryParse {
    pub raw_query: String,
    pub entities: BTreeMap<String, String>,
    pub intents: BTreeSet<String>,
    /// Ticket ids written out in the query text.
    pub ticket_refs: Vec<String>,
    pub source: ParseSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl QueryParse {
    pub fn is_usable(&self) -> bool {
        !self.entities.is_empty() || !self.intents.is_empty() || !self.ticket_refs.is_empty()
    }
}

static TICKET_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b[A-Z][A-Z0-9]{1,9}-[0-9]+(?:'s)?").unwrap());
static QUOTED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?:^|\s)['"\u{201c}\u{2018}]([^'"\u{201d}\u{2019}]{2,}?)['"\u{201d}\u{2019}](?:\s|$|[.,?!;:])"#).unwrap()
});
static PRIORITY_MENTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bwith\s+(?:a\s+)?([a-z0-9]+)\s+priority\b|\bpriority\s*(?:is|of|:|=)?\s*(p[0-4]|blocker|critical|major|minor|trivial|high|medium|low)\b").unwrap()
});
static CLAUSE_SPLIT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\s+(?:where|when|in which|because|due to|after|while|whenever)\s+|\s*[,;]\s+").unwrap()
});

/// Cue phrases mapped to the section they ask for, longest first.
const INTENT_CUES: &[(&str, &str)] = &[
    ("what are the steps to reproduce", STEPS_TO_REPRODUCE),
    ("how can i reproduce", STEPS_TO_REPRODUCE),
    ("how do i reproduce", STEPS_TO_REPRODUCE),
    ("how to reproduce", STEPS_TO_REPRODUCE),
    ("steps to reproduce", STEPS_TO_REPRODUCE),
    ("reproduction steps", STEPS_TO_REPRODUCE),
    ("how to repro", STEPS_TO_REPRODUCE),
    ("repro steps", STEPS_TO_REPRODUCE),
    ("reproduce", STEPS_TO_REPRODUCE),
    ("what is the fix for", FIX_SOLUTION),
    ("how do i resolve", FIX_SOLUTION),
    ("how can i fix", FIX_SOLUTION),
    ("how do i fix", FIX_SOLUTION),
    ("how to resolve", FIX_SOLUTION),
    ("what is the fix", FIX_SOLUTION),
    ("how to solve", FIX_SOLUTION),
    ("workaround for", FIX_SOLUTION),
    ("resolution for", FIX_SOLUTION),
    ("solution for", FIX_SOLUTION),
    ("solution to", FIX_SOLUTION),
    ("how to fix", FIX_SOLUTION),
    ("fix for", FIX_SOLUTION),
    ("workaround", FIX_SOLUTION),
    ("resolution", FIX_SOLUTION),
    ("solution", FIX_SOLUTION),
    ("resolve", FIX_SOLUTION),
    ("solve", FIX_SOLUTION),
    ("fix", FIX_SOLUTION),
    ("what is the priority of", PRIORITY),
    ("what priority", PRIORITY),
    ("how severe", PRIORITY),
    ("description of", DESCRIPTION),
    ("describe", DESCRIPTION),
    ("summary of", SUMMARY),
    ("summarize", SUMMARY),
];

const LEADING_FILLER: &[&str] = &[
    "the", "a", "an", "for", "of", "to", "with", "about", "on", "in", "is", "are", "was", "my",
    "our", "this", "that", "there", "any", "and", "issue", "problem", "bug", "ticket",
];

const GENERIC: &[&str] = &[
    "issue", "issues", "problem", "bug", "ticket", "it", "this", "that", "s", "the", "a", "an",
    "one", "error", "thing",
];

/// Blanks out `range` in both the working text and its ASCII-lowercase shadow.
fn blank(work: &mut String, lower: &mut String, range: std::ops::Range<usize>) {
    let spaces = " ".repeat(range.len());
    work.replace_range(range.clone(), &spaces);
    lower.replace_range(range, &spaces);
}

fn word_bounded(hay: &str, start: usize, len: usize) -> bool {
    let before = hay[..start].chars().next_back();
    let after = hay[start + len..].chars().next();
    !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
}

fn clean_clause(clause: &str) -> String {
    let mut words: Vec<&str> = clause
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'' && c != '-'))
        .map(|w| w.trim_matches(|c: char| c == '\'' || c == '-'))
        .filter(|w| !w.is_empty() && *w != "s")
        .collect();
    while words.first().is_some_and(|w| LEADING_FILLER.contains(&w.to_ascii_lowercase().as_str())) {
        words.remove(0);
    }
    if words.iter().all(|w| GENERIC.contains(&w.to_ascii_lowercase().as_str())) {
        return String::new();
    }
    // keep interior punctuation as written, trim only the ends
    let joined = words.join(" ");
    joined.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'').to_string()
}

/// Ticket ids mentioned in the query, in order of appearance.
pub fn extract_ticket_refs(query: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for m in TICKET_REF.find_iter(query) {
        let id = m.as_str().trim_end_matches("'s").to_string();
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

/// Deterministic rule-based parse used when no adapter is configured or the
/// adapter fails: cue phrases give intents, a quoted phrase or the first
/// clause gives the summary entity, later clauses give the description.
pub fn lexicon_parse(query: &str, template: &GraphTemplate) -> Result<QueryParse> {
    let trimmed = query.trim();
    if trimmed.is_empty() {
        return Err(Error::UnparseableQuery("empty query".into()));
    }
    let mut work = trimmed.to_string();
    let mut lower = work.to_ascii_lowercase();
    let ticket_refs = extract_ticket_refs(&work);
    let ref_spans: Vec<_> = TICKET_REF.find_iter(&work).map(|m| m.range()).collect();
    for range in ref_spans {
        blank(&mut work, &mut lower, range);
    }

    let mut entities = BTreeMap::new();
    let mut intents = BTreeSet::new();

    let priority = PRIORITY_MENTION.captures(&work).map(|c| {
        let value = c.get(1).or_else(|| c.get(2)).map(|m| m.as_str().to_string());
        (c.get(0).map(|m| m.range()).unwrap_or_default(), value)
    });
    if let Some((range, value)) = priority {
        if let (Some(value), Some(spec)) = (value, template.section(PRIORITY)) {
            entities.insert(spec.name.clone(), value);
        }
        blank(&mut work, &mut lower, range);
    }

    for (cue, section) in INTENT_CUES {
        let Some(spec) = template.resolve(section) else {
            continue;
        };
        let mut from = 0;
        while let Some(rel) = lower[from..].find(cue) {
            let start = from + rel;
            if word_bounded(&lower, start, cue.len()) {
                intents.insert(spec.name.clone());
                blank(&mut work, &mut lower, start..start + cue.len());
            }
            from = start + cue.len();
        }
    }

    let quoted = QUOTED.captures(&work).and_then(|c| {
        let whole = c.get(0)?.range();
        Some((whole, c.get(1)?.as_str().trim().to_string()))
    });
    let mut summary_from_quote = false;
    if let Some((range, phrase)) = quoted {
        let phrase = clean_clause(&phrase);
        if !phrase.is_empty() && template.section(SUMMARY).is_some() {
            entities.insert(SUMMARY.to_string(), phrase);
            summary_from_quote = true;
        }
        blank(&mut work, &mut lower, range);
    }

    let clauses: Vec<String> = CLAUSE_SPLIT
        .split(&work)
        .map(clean_clause)
        .filter(|c| !c.is_empty())
        .collect();
    let mut rest = clauses.into_iter();
    if !summary_from_quote {
        if let Some(first) = rest.next() {
            if template.section(SUMMARY).is_some() {
                entities.insert(SUMMARY.to_string(), first);
            }
        }
    }
    let description: Vec<String> = rest.collect();
    if !description.is_empty() && template.section(DESCRIPTION).is_some() {
        entities.insert(DESCRIPTION.to_string(), description.join(" "));
    }

    let parse = QueryParse {
        raw_query: query.to_string(),
        entities,
        intents,
        ticket_refs,
        source: ParseSource::Lexicon,
        warnings: Vec::new(),
    };
    if parse.is_usable() {
        Ok(parse)
    } else {
        Err(Error::UnparseableQuery(format!("no entity, intent or ticket id in {trimmed:?}")))
    }
}

pub fn query_prompt(query: &str, template: &GraphTemplate) -> String {
    let sections: Vec<&str> = template.section_names().collect();
    format!(
        "Extract structured search information from a customer-support question.\n\
         Known ticket sections: {}.\n\
         Respond with one JSON object with two fields:\n\
         \"entities\": an object mapping a known section name to the text the question \
         gives for that section;\n\
         \"intents\": a list of known section names the question asks to be answered.\n\
         No commentary.\n\nQuestion: {query}",
        sections.join(", ")
    )
}

#[derive(Deserialize)]
struct AdapterQueryReply {
    #[serde(default)]
    entities: BTreeMap<String, String>,
    #[serde(default)]
    intents: Vec<String>,
}

fn adapter_parse(query: &str, template: &GraphTemplate, adapter: &AdapterHandle) -> Result<QueryParse, AdapterError> {
    let text = adapter.call(
        GenerationTask::ParseQuery,
        query_prompt(query, template),
        serde_json::json!({ "query": query }),
    )?;
    let reply: AdapterQueryReply = serde_json::from_value(extract_json_object(&text)?)
        .map_err(|e| AdapterError::Malformed(e.to_string()))?;
    let mut warnings = Vec::new();
    let mut entities = BTreeMap::new();
    for (key, value) in reply.entities {
        match template.resolve(&key) {
            Some(spec) if !value.trim().is_empty() => {
                entities.insert(spec.name.clone(), value.trim().to_string());
            }
            Some(_) => {}
            None => warnings.push(format!("adapter entity key {key:?} is not a template section; dropped")),
        }
    }
    let mut intents = BTreeSet::new();
    for intent in reply.intents {
        match template.resolve(&intent) {
            Some(spec) => {
                intents.insert(spec.name.clone());
            }
            None => warnings.push(format!("adapter intent {intent:?} is not a template section; dropped")),
        }
    }
    Ok(QueryParse {
        raw_query: query.to_string(),
        entities,
        intents,
        ticket_refs: extract_ticket_refs(query),
        source: ParseSource::Adapter,
        warnings,
    })
}

/// Parses a query through the adapter, validating its output against the
/// template; falls back to [`lexicon_parse`] when the adapter fails or
/// yields nothing usable.
pub fn parse_query(query: &str, template: &GraphTemplate, adapter: Option<&AdapterHandle>) -> Result<QueryParse> {
    if query.trim().is_empty() {
        return Err(Error::UnparseableQuery("empty query".into()));
    }
    let mut warnings = Vec::new();
    if let Some(adapter) = adapter {
        match adapter_parse(query, template, adapter) {
            Ok(parse) if !parse.entities.is_empty() || !parse.intents.is_empty() => return Ok(parse),
            Ok(parse) => {
                warnings.extend(parse.warnings);
                warnings.push("adapter parse had no usable entity or intent; used lexicon".into());
            }
            Err(err) => warnings.push(format!("adapter {} failed ({err}); used lexicon", adapter.name())),
        }
    }
    let mut parse = lexicon_parse(query, template)?;
    parse.warnings = warnings;
    Ok(parse)
}
