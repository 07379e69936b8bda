//! Prompt assembly from typed sections and a swappable template file.
//!
//! A rendered prompt is the ordered list of its sections, each introduced by
//! a `### <Name>` header line and separated by one blank line. Section text
//! may never contain a line that starts with `### `, which keeps rendering
//! injective.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::DisambiguationNote;
use crate::corpus::{Document, EntityType, TypeDefinition};
use crate::demobuild::{serialize_demonstration, Demonstration};
use crate::wiki::KnowledgeSnippet;

pub const DEFAULT_TEMPLATES: &str = include_str!("../templates/default.tmpl");

const HEADER_PREFIX: &str = "### ";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("missing mandatory section {0}")]
    MissingSection(SectionKind),
    #[error("duplicate type definition for {0}")]
    DuplicateType(EntityType),
    #[error("{0} section is empty")]
    EmptySection(SectionKind),
    #[error("{0} section contains a line starting with the section separator `### `")]
    SeparatorCollision(SectionKind),
    #[error("no demonstrations")]
    NoDemonstrations,
    #[error("prior output is empty")]
    EmptyPriorOutput,
    #[error("template: {0}")]
    Template(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SectionKind {
    Task,
    TypeDefs,
    Demos,
    Knowledge,
    Disambiguation,
    Input,
    ReflectionGuide,
    ReflectionReport,
    CorrectionGuide,
    PriorOutput,
}

impl SectionKind {
    pub fn header(self) -> &'static str {
        match self {
            SectionKind::Task => "Task",
            SectionKind::TypeDefs => "Type Definitions",
            SectionKind::Demos => "Examples",
            SectionKind::Knowledge => "Background Knowledge",
            SectionKind::Disambiguation => "Disambiguation Notes",
            SectionKind::Input => "Input",
            SectionKind::ReflectionGuide => "Reflection Guidelines",
            SectionKind::ReflectionReport => "Reflection Report",
            SectionKind::CorrectionGuide => "Correction Instructions",
            SectionKind::PriorOutput => "Previous Output",
        }
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSection {
    pub kind: SectionKind,
    pub text: String,
}

impl PromptSection {
    pub fn new(kind: SectionKind, text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PromptError::EmptySection(kind));
        }
        if text.lines().any(|l| l.starts_with(HEADER_PREFIX)) {
            return Err(PromptError::SeparatorCollision(kind));
        }
        Ok(Self { kind, text })
    }

    /// For model-produced text: lines that would read as a section header are
    /// indented by one space instead of being rejected.
    fn from_model_output(kind: SectionKind, text: &str) -> Result<Self, PromptError> {
        let escaped: Vec<String> = text
            .lines()
            .map(|l| if l.starts_with(HEADER_PREFIX) { format!(" {l}") } else { l.to_owned() })
            .collect();
        Self::new(kind, escaped.join("\n"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub sections: Vec<PromptSection>,
    pub rendered: String,
    pub fingerprint: String,
}

impl PromptBundle {
    pub fn from_sections(sections: Vec<PromptSection>) -> Self {
        let rendered = sections
            .iter()
            .map(|s| format!("{HEADER_PREFIX}{}\n{}", s.kind.header(), s.text))
            .collect::<Vec<_>>()
            .join("\n\n");
        let fingerprint = fingerprint(&rendered);
        Self {
            sections,
            rendered,
            fingerprint,
        }
    }

    pub fn kinds(&self) -> Vec<SectionKind> {
        self.sections.iter().map(|s| s.kind).collect()
    }

    pub fn has(&self, kind: SectionKind) -> bool {
        self.sections.iter().any(|s| s.kind == kind)
    }
}

/// Hex SHA-256 of the text.
pub fn fingerprint(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

const BLOCKS: &[(&str, &[&str])] = &[
    ("task", &["types"]),
    ("input", &["text", "types"]),
    ("reference_input", &["text"]),
    ("reflection_guide", &["types"]),
    ("correction_task", &["types"]),
    ("correction_guide", &["types"]),
    ("planner_task", &["types", "max_queries", "max_ambiguous"]),
    ("disambiguation_task", &["mentions"]),
];

/// Named text blocks with `{placeholder}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    blocks: BTreeMap<String, String>,
    pub fingerprint: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

fn placeholders(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if after[..close].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && close > 0 => {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

impl Templates {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(source: &str) -> Result<Self, PromptError> {
        let mut blocks: BTreeMap<String, String> = BTreeMap::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        let flush = |cur: Option<(String, Vec<&str>)>, blocks: &mut BTreeMap<String, String>| {
            if let Some((name, lines)) = cur {
                let body = lines.join("\n").trim().to_owned();
                if blocks.insert(name.clone(), body).is_some() {
                    return Err(PromptError::Template(format!("block {name:?} defined twice")));
                }
            }
            Ok(())
        };
        for line in source.lines() {
            if let Some(name) = line.strip_prefix("@@") {
                flush(current.take(), &mut blocks)?;
                current = Some((name.trim().to_owned(), Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                lines.push(line);
            } else if !line.trim().is_empty() && !line.starts_with('#') {
                return Err(PromptError::Template(format!("text outside a block: {line:?}")));
            }
        }
        flush(current.take(), &mut blocks)?;

        for (name, allowed) in BLOCKS {
            let body = blocks
                .get(*name)
                .ok_or_else(|| PromptError::Template(format!("missing block {name:?}")))?;
            if body.is_empty() {
                return Err(PromptError::Template(format!("block {name:?} is empty")));
            }
            for p in placeholders(body) {
                if !allowed.contains(&p) {
                    return Err(PromptError::Template(format!("block {name:?}: unknown placeholder {{{p}}}")));
                }
            }
        }
        if let Some(extra) = blocks.keys().find(|k| !BLOCKS.iter().any(|(n, _)| n == k)) {
            return Err(PromptError::Template(format!("unknown block {extra:?}")));
        }
        Ok(Self {
            blocks,
            fingerprint: fingerprint(source),
        })
    }

    pub fn raw(&self, block: &str) -> &str {
        self.blocks.get(block).map(String::as_str).unwrap_or_default()
    }

    /// Single-pass substitution; inserted values are never re-expanded.
    pub fn render(&self, block: &str, vars: &[(&str, &str)]) -> String {
        let src = self.raw(block);
        let mut out = String::with_capacity(src.len());
        let mut rest = src;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let hit = after
                .find('}')
                .and_then(|close| vars.iter().find(|(k, _)| *k == &after[..close]).map(|(_, v)| (close, *v)));
            match hit {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

fn type_list(types: &[EntityType]) -> String {
    types.iter().map(EntityType::as_str).collect::<Vec<_>>().join(", ")
}

pub fn compose_type_section(defs: &[TypeDefinition]) -> Result<PromptSection, PromptError> {
    let mut seen = HashSet::new();
    for d in defs {
        if !seen.insert(&d.entity_type) {
            return Err(PromptError::DuplicateType(d.entity_type.clone()));
        }
        if d.description.trim().is_empty() {
            return Err(PromptError::EmptySection(SectionKind::TypeDefs));
        }
    }
    let text = defs
        .iter()
        .map(|d| format!("{}: {}", d.entity_type, d.description.trim()))
        .collect::<Vec<_>>()
        .join("\n");
    PromptSection::new(SectionKind::TypeDefs, text)
}

pub fn compose_demo_section(demos: &[Demonstration]) -> Result<PromptSection, PromptError> {
    if demos.is_empty() {
        return Err(PromptError::NoDemonstrations);
    }
    let text = demos.iter().map(serialize_demonstration).collect::<Vec<_>>().join("\n\n");
    PromptSection::new(SectionKind::Demos, text)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn compose_knowledge_section(snippets: &[KnowledgeSnippet]) -> Result<Option<PromptSection>, PromptError> {
    if snippets.is_empty() {
        return Ok(None);
    }
    let text = snippets
        .iter()
        .map(|s| format!("[{}] {} (source: {})", one_line(&s.title), one_line(&s.summary), s.source_url))
        .collect::<Vec<_>>()
        .join("\n");
    PromptSection::new(SectionKind::Knowledge, text).map(Some)
}

pub fn compose_disambiguation_section(
    notes: &[DisambiguationNote],
) -> Result<Option<PromptSection>, PromptError> {
    if notes.is_empty() {
        return Ok(None);
    }
    let text = notes
        .iter()
        .map(|n| format!("{}: {}", n.surface, one_line(&n.interpretation)))
        .collect::<Vec<_>>()
        .join("\n");
    PromptSection::new(SectionKind::Disambiguation, text).map(Some)
}

/// Sections feeding the initial prediction. Task, type definitions and
/// demonstrations are mandatory.
#[derive(Debug, Clone, Default)]
pub struct InitialParts {
    pub type_defs: Option<PromptSection>,
    pub demos: Option<PromptSection>,
    pub knowledge: Option<PromptSection>,
    pub disambiguation: Option<PromptSection>,
}

pub fn assemble_initial_prompt(
    doc: &Document,
    parts: &InitialParts,
    templates: &Templates,
    type_set: &[EntityType],
) -> Result<PromptBundle, PromptError> {
    let types = type_list(type_set);
    let task = templates.render("task", &[("types", &types)]);
    if task.trim().is_empty() {
        return Err(PromptError::MissingSection(SectionKind::Task));
    }
    let mut sections = vec![PromptSection::new(SectionKind::Task, task)?];
    sections.push(parts.type_defs.clone().ok_or(PromptError::MissingSection(SectionKind::TypeDefs))?);
    sections.push(parts.demos.clone().ok_or(PromptError::MissingSection(SectionKind::Demos))?);
    sections.extend(parts.knowledge.clone());
    sections.extend(parts.disambiguation.clone());
    let input = templates.render("input", &[("text", &doc.text), ("types", &types)]);
    sections.push(PromptSection::new(SectionKind::Input, input)?);
    Ok(PromptBundle::from_sections(sections))
}

fn reference_input(doc: &Document, templates: &Templates) -> Result<PromptSection, PromptError> {
    PromptSection::new(SectionKind::Input, templates.render("reference_input", &[("text", &doc.text)]))
}

pub fn reflection_guide(templates: &Templates, type_set: &[EntityType]) -> String {
    templates.render("reflection_guide", &[("types", &type_list(type_set))])
}

pub fn assemble_reflection_prompt(
    doc: &Document,
    raw_initial_output: &str,
    guide: &str,
    templates: &Templates,
) -> Result<PromptBundle, PromptError> {
    if raw_initial_output.trim().is_empty() {
        return Err(PromptError::EmptyPriorOutput);
    }
    Ok(PromptBundle::from_sections(vec![
        PromptSection::new(SectionKind::ReflectionGuide, guide)?,
        reference_input(doc, templates)?,
        PromptSection::from_model_output(SectionKind::PriorOutput, raw_initial_output)?,
    ]))
}

/// Correction prompt. The reflection guide is repeated so the model sees the
/// criteria the report was written against.
pub fn assemble_correction_prompt(
    doc: &Document,
    raw_initial_output: &str,
    guide: &str,
    report_text: &str,
    templates: &Templates,
    type_set: &[EntityType],
) -> Result<PromptBundle, PromptError> {
    if raw_initial_output.trim().is_empty() {
        return Err(PromptError::EmptyPriorOutput);
    }
    let types = type_list(type_set);
    let report = if report_text.trim().is_empty() { "no issues found" } else { report_text };
    Ok(PromptBundle::from_sections(vec![
        PromptSection::new(SectionKind::Task, templates.render("correction_task", &[("types", &types)]))?,
        reference_input(doc, templates)?,
        PromptSection::from_model_output(SectionKind::PriorOutput, raw_initial_output)?,
        PromptSection::new(SectionKind::ReflectionGuide, guide)?,
        PromptSection::from_model_output(SectionKind::ReflectionReport, report)?,
        PromptSection::new(SectionKind::CorrectionGuide, templates.render("correction_guide", &[("types", &types)]))?,
    ]))
}

pub fn assemble_planner_prompt(
    doc: &Document,
    type_defs: &PromptSection,
    templates: &Templates,
    type_set: &[EntityType],
    max_queries: usize,
    max_ambiguous: usize,
) -> Result<PromptBundle, PromptError> {
    let task = templates.render(
        "planner_task",
        &[
            ("types", &type_list(type_set)),
            ("max_queries", &max_queries.to_string()),
            ("max_ambiguous", &max_ambiguous.to_string()),
        ],
    );
    Ok(PromptBundle::from_sections(vec![
        PromptSection::new(SectionKind::Task, task)?,
        type_defs.clone(),
        reference_input(doc, templates)?,
    ]))
}

pub fn assemble_disambiguation_prompt(
    doc: &Document,
    mentions: &[crate::agents::AmbiguousMention],
    templates: &Templates,
) -> Result<PromptBundle, PromptError> {
    let list = mentions
        .iter()
        .map(|m| match &m.candidate_types {
            Some(ts) if !ts.is_empty() => format!("- {} (candidate types: {})", m.surface, type_list(ts)),
            _ => format!("- {}", m.surface),
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(PromptBundle::from_sections(vec![
        PromptSection::new(SectionKind::Task, templates.render("disambiguation_task", &[("mentions", &list)]))?,
        reference_input(doc, templates)?,
    ]))
}
