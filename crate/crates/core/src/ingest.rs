//! Line-delimited JSON readers and writers for tickets and golden records.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::builder::normalize_relation;
use crate::error::{Error, Result};
use crate::eval::run::EvalRecord;
use crate::parser::RawTicket;

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Reads tickets, one JSON object per line with fields `ticket_id`, `title`,
/// `body` and `link_fields`. Blank lines are skipped.
pub fn read_tickets(path: &Path) -> Result<Vec<RawTicket>> {
    read_jsonl(path)
}

pub fn read_golden(path: &Path) -> Result<Vec<EvalRecord>> {
    read_jsonl(path)
}

/// Validates a ticket batch and puts it in canonical form: ids unique and
/// non-empty, CRLF line ends converted, titles trimmed, relation labels in
/// snake case, link targets trimmed, deduplicated and sorted.
pub fn normalize_tickets(tickets: Vec<RawTicket>) -> Result<(Vec<RawTicket>, Vec<String>)> {
    let mut seen = HashSet::new();
    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(tickets.len());
    for (i, t) in tickets.into_iter().enumerate() {
        let id = t.ticket_id.trim().to_string();
        if id.is_empty() || id.contains(char::is_control) {
            return Err(Error::InvalidTicket(format!("record {}: invalid ticket_id {:?}", i + 1, t.ticket_id)));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::InvalidTicket(format!("record {}: duplicate ticket_id {id}", i + 1)));
        }
        if id != t.ticket_id {
            warnings.push(format!("{id}: ticket_id trimmed"));
        }
        let mut links: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (relation, targets) in t.link_fields {
            let relation = normalize_relation(&relation);
            if relation.is_empty() {
                warnings.push(format!("{id}: link field with empty relation dropped"));
                continue;
            }
            let entry = links.entry(relation).or_default();
            entry.extend(targets.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()));
            entry.sort();
            entry.dedup();
        }
        links.retain(|_, v| !v.is_empty());
        out.push(RawTicket {
            ticket_id: id,
            title: t.title.trim().to_string(),
            body: t.body.replace("\r\n", "\n"),
            link_fields: links,
        });
    }
    Ok((out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_normalize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        fs::write(
            &path,
            "{\"ticket_id\":\" A-1 \",\"title\":\" t \",\"body\":\"x\\r\\ny\",\"link_fields\":{\"Caused By\":[\"B-2\",\"B-2\",\" \"]}}\n\n\
             {\"ticket_id\":\"B-2\",\"title\":\"u\"}\n",
        )
        .unwrap();
        let raw = read_tickets(&path).unwrap();
        assert_eq!(raw.len(), 2);
        let (norm, warnings) = normalize_tickets(raw).unwrap();
        assert_eq!(norm[0].ticket_id, "A-1");
        assert_eq!(norm[0].title, "t");
        assert_eq!(norm[0].body, "x\ny");
        assert_eq!(norm[0].link_fields["caused_by"], vec!["B-2"]);
        assert!(norm[1].link_fields.is_empty());
        assert_eq!(warnings.len(), 1);

        let out = dir.path().join("n.jsonl");
        write_jsonl(&out, &norm).unwrap();
        assert_eq!(read_tickets(&out).unwrap(), norm);
    }

    #[test]
    fn rejects_bad_batches() {
        assert!(normalize_tickets(vec![RawTicket::new("", "t", "")]).is_err());
        assert!(normalize_tickets(vec![RawTicket::new("A", "t", ""), RawTicket::new("A", "u", "")]).is_err());
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        fs::write(&path, "{\"ticket_id\":\"A\",\"title\":\"t\"}\nnot json\n").unwrap();
        let err = read_tickets(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}
