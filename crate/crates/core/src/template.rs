//! Canonical ticket section schema.
//!
//! The template drives three things: which sections the parser extracts (and
//! how), which section names a query may mention, and which relation labels a
//! graph query plan may traverse. Section names are case-normalized so that
//! "Steps To Reproduce", "steps_to_reproduce" and "steps to reproduce" all
//! join on the same key.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Section name reserved for the root node of every ticket tree.
pub const ROOT_SECTION: &str = "ticket";

/// Sections every template must declare.
pub const CANONICAL_SECTIONS: [&str; 5] = [
    "summary",
    "description",
    "priority",
    "steps to reproduce",
    "fix solution",
];

pub const SUMMARY: &str = "summary";
pub const DESCRIPTION: &str = "description";
pub const PRIORITY: &str = "priority";
pub const STEPS_TO_REPRODUCE: &str = "steps to reproduce";
pub const FIX_SOLUTION: &str = "fix solution";

/// Lowercase, map `_`/`-` to spaces, collapse runs of whitespace.
pub fn normalize_section_name(raw: &str) -> String {
    raw.chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// `"steps to reproduce"` -> `"HAS_STEPS_TO_REPRODUCE"`.
pub fn relation_label(section: &str) -> String {
    let normalized = normalize_section_name(section);
    format!("HAS_{}", normalized.replace(' ', "_").to_uppercase())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleDescriptor {
    /// A single line of the form `<prefix>: value`.
    FieldPrefix { prefix: String },
    /// Content between a pair of fence lines starting with `marker`.
    FencedBlock { marker: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Extraction {
    Rule { rule: RuleDescriptor },
    Generative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpec {
    pub name: String,
    pub extraction: Extraction,
    pub embeddable: bool,
    /// Parent section in the intra-ticket tree; `None` hangs off the root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Alternative spellings accepted from adapters, headings and queries.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl SectionSpec {
    pub fn generative(name: &str, embeddable: bool) -> Self {
        Self {
            name: name.to_string(),
            extraction: Extraction::Generative,
            embeddable,
            parent: None,
            aliases: Vec::new(),
        }
    }

    pub fn rule(name: &str, rule: RuleDescriptor, embeddable: bool) -> Self {
        Self {
            name: name.to_string(),
            extraction: Extraction::Rule { rule },
            embeddable,
            parent: None,
            aliases: Vec::new(),
        }
    }

    pub fn with_parent(mut self, parent: &str) -> Self {
        self.parent = Some(parent.to_string());
        self
    }

    pub fn with_aliases(mut self, aliases: &[&str]) -> Self {
        self.aliases = aliases.iter().map(|a| a.to_string()).collect();
        self
    }

    pub fn rule_descriptor(&self) -> Option<&RuleDescriptor> {
        match &self.extraction {
            Extraction::Rule { rule } => Some(rule),
            Extraction::Generative => None,
        }
    }

    pub fn is_rule(&self) -> bool {
        self.rule_descriptor().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphTemplate {
    pub version: u32,
    pub sections: Vec<SectionSpec>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl GraphTemplate {
    /// Builds and validates a template.
    pub fn new(version: u32, sections: Vec<SectionSpec>) -> Result<Self> {
        let mut tpl = Self {
            version,
            sections,
            lookup: HashMap::new(),
        };
        tpl.reindex()?;
        Ok(tpl)
    }

    /// The built-in ticket schema.
    pub fn standard() -> Self {
        let sections = vec![
            SectionSpec::generative(SUMMARY, true).with_aliases(&["issue summary", "title"]),
            SectionSpec::generative(DESCRIPTION, true)
                .with_aliases(&["issue description", "problem"]),
            SectionSpec::rule(
                PRIORITY,
                RuleDescriptor::FieldPrefix {
                    prefix: "priority".into(),
                },
                false,
            )
            .with_aliases(&["severity"]),
            SectionSpec::generative(STEPS_TO_REPRODUCE, true)
                .with_parent(DESCRIPTION)
                .with_aliases(&["repro steps", "reproduction steps"]),
            SectionSpec::generative(FIX_SOLUTION, true)
                .with_aliases(&["fix", "solution", "resolution", "workaround"]),
            SectionSpec::rule(
                "code",
                RuleDescriptor::FencedBlock {
                    marker: "```".into(),
                },
                false,
            ),
        ];
        Self::new(1, sections).expect("standard template is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut tpl: GraphTemplate =
            serde_json::from_str(text).map_err(|e| Error::InvalidTemplate(e.to_string()))?;
        tpl.reindex()?;
        Ok(tpl)
    }

    fn reindex(&mut self) -> Result<()> {
        self.lookup.clear();
        for (i, spec) in self.sections.iter().enumerate() {
            if spec.name.is_empty() {
                return Err(Error::InvalidTemplate("empty section name".into()));
            }
            if normalize_section_name(&spec.name) != spec.name {
                return Err(Error::InvalidTemplate(format!(
                    "section name {:?} is not in normalized form",
                    spec.name
                )));
            }
            if spec.name == ROOT_SECTION {
                return Err(Error::InvalidTemplate(format!(
                    "section name {ROOT_SECTION:?} is reserved for the root node"
                )));
            }
            if let Some(parent) = &spec.parent {
                // parents must be declared earlier, which also rules out cycles
                let declared = self.sections[..i].iter().any(|s| &s.name == parent);
                if !declared {
                    return Err(Error::InvalidTemplate(format!(
                        "section {:?} has parent {:?} which is not declared before it",
                        spec.name, parent
                    )));
                }
            }
            if let Some(RuleDescriptor::FieldPrefix { prefix } | RuleDescriptor::FencedBlock { marker: prefix }) =
                spec.rule_descriptor()
            {
                if prefix.trim().is_empty() {
                    return Err(Error::InvalidTemplate(format!(
                        "rule section {:?} has an empty descriptor",
                        spec.name
                    )));
                }
            }
            let keys = std::iter::once(spec.name.clone())
                .chain(spec.aliases.iter().map(|a| normalize_section_name(a)));
            for key in keys {
                if key.is_empty() {
                    return Err(Error::InvalidTemplate(format!(
                        "section {:?} has an empty alias",
                        spec.name
                    )));
                }
                if self.lookup.insert(key.clone(), i).is_some() {
                    return Err(Error::InvalidTemplate(format!(
                        "duplicate section name or alias {key:?}"
                    )));
                }
            }
        }
        for required in CANONICAL_SECTIONS {
            if !self.sections.iter().any(|s| s.name == required) {
                return Err(Error::InvalidTemplate(format!(
                    "missing canonical section {required:?}"
                )));
            }
        }
        Ok(())
    }

    /// Resolves a raw name or alias to its section.
    pub fn resolve(&self, raw: &str) -> Option<&SectionSpec> {
        self.lookup
            .get(&normalize_section_name(raw))
            .map(|&i| &self.sections[i])
    }

    pub fn section(&self, name: &str) -> Option<&SectionSpec> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|s| s.name.as_str())
    }

    pub fn embeddable_sections(&self) -> impl Iterator<Item = &SectionSpec> {
        self.sections.iter().filter(|s| s.embeddable)
    }

    /// Every name and alias, longest first, paired with its canonical section.
    pub fn names_and_aliases(&self) -> Vec<(String, &str)> {
        let mut out: Vec<(String, &str)> = self
            .lookup
            .iter()
            .map(|(k, &i)| (k.clone(), self.sections[i].name.as_str()))
            .collect();
        out.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        out
    }

    /// Section ancestry from the root down to and including `section`.
    pub fn lineage(&self, section: &str) -> Option<Vec<&str>> {
        let mut chain = vec![self.section(section)?.name.as_str()];
        let mut current = self.section(section)?;
        while let Some(parent) = &current.parent {
            current = self.section(parent)?;
            chain.push(current.name.as_str());
        }
        chain.reverse();
        Some(chain)
    }

    /// Relation labels traversed from the root to reach `section`.
    pub fn path_to(&self, section: &str) -> Option<Vec<String>> {
        self.lineage(section)
            .map(|chain| chain.into_iter().map(relation_label).collect())
    }

    /// All relation labels a plan may use.
    pub fn relation_vocabulary(&self) -> BTreeSet<String> {
        self.sections.iter().map(|s| relation_label(&s.name)).collect()
    }

    pub fn section_for_label(&self, label: &str) -> Option<&SectionSpec> {
        self.sections.iter().find(|s| relation_label(&s.name) == label)
    }
}

impl Default for GraphTemplate {
    fn default() -> Self {
        Self::standard()
    }
}
