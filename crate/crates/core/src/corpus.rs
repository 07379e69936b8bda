//! Documents, entity types and gold mentions, plus JSONL and CoNLL ingestion.
//!
//! All spans are half-open ranges of Unicode scalar values (`char`s), not
//! bytes, so offsets produced by Python-based annotation tools line up.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("document {doc_id}: span [{start},{end}) does not match surface {surface:?} (text has {found:?})")]
    SpanMismatch {
        doc_id: String,
        start: usize,
        end: usize,
        surface: String,
        found: Option<String>,
    },
    #[error("document {doc_id}: duplicate gold mention {surface:?} [{start},{end}) {entity_type}")]
    DuplicateMention {
        doc_id: String,
        surface: String,
        start: usize,
        end: usize,
        entity_type: String,
    },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("invalid entity type {0:?}")]
    InvalidType(String),
    #[error("line {line}: unreadable tag {tag:?}")]
    BadTag { line: usize, tag: String },
    #[error("entity type {0} is used by a gold mention but missing from the type set")]
    UnknownType(String),
}

/// An entity label such as `PER` or `LOC`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityType(String);

impl EntityType {
    pub fn new(name: impl Into<String>) -> Result<Self, CorpusError> {
        let name = name.into();
        if name.is_empty()
            || name.chars().any(|c| c.is_whitespace() || c == '[' || c == ']')
        {
            return Err(CorpusError::InvalidType(name));
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EntityType {
    type Error = CorpusError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<EntityType> for String {
    fn from(value: EntityType) -> Self {
        value.0
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Natural-language description of what one entity type covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeDefinition {
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    pub description: String,
}

/// A grounded entity occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
}

impl Mention {
    pub fn new(surface: impl Into<String>, start: usize, end: usize, entity_type: EntityType) -> Self {
        Self {
            surface: surface.into(),
            start,
            end,
            entity_type,
        }
    }

    /// True when `text[start..end]` (in chars) is exactly `surface`.
    pub fn is_grounded_in(&self, text: &str) -> bool {
        self.start < self.end && char_slice(text, self.start, self.end) == Some(self.surface.as_str())
    }

    pub fn overlap(&self, other: &Mention) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Vec<Mention>>,
}

impl Document {
    pub fn unlabeled(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold: None,
        }
    }

    /// Builds a labeled document, validating and sorting the gold mentions.
    pub fn labeled(
        id: impl Into<String>,
        text: impl Into<String>,
        mut gold: Vec<Mention>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let text = text.into();
        for m in &gold {
            if !m.is_grounded_in(&text) {
                return Err(CorpusError::SpanMismatch {
                    doc_id: id.clone(),
                    start: m.start,
                    end: m.end,
                    surface: m.surface.clone(),
                    found: char_slice(&text, m.start, m.end).map(str::to_owned),
                });
            }
        }
        gold.sort_by(|a, b| (a.start, a.end, &a.entity_type).cmp(&(b.start, b.end, &b.entity_type)));
        for w in gold.windows(2) {
            if w[0] == w[1] {
                return Err(CorpusError::DuplicateMention {
                    doc_id: id,
                    surface: w[0].surface.clone(),
                    start: w[0].start,
                    end: w[0].end,
                    entity_type: w[0].entity_type.to_string(),
                });
            }
        }
        Ok(Self {
            id,
            text,
            gold: Some(gold),
        })
    }

    pub fn gold(&self) -> &[Mention] {
        self.gold.as_deref().unwrap_or(&[])
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub documents: Vec<Document>,
    pub type_set: Vec<EntityType>,
    /// Dangling `I-` tags promoted to `B-` by the CoNLL reader.
    #[serde(default)]
    pub warnings: usize,
}

impl Dataset {
    pub fn new(documents: Vec<Document>, type_set: Vec<EntityType>) -> Result<Self, CorpusError> {
        let mut ids = HashSet::new();
        for d in &documents {
            if !ids.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateId(d.id.clone()));
            }
            for m in d.gold() {
                if !type_set.contains(&m.entity_type) {
                    return Err(CorpusError::UnknownType(m.entity_type.to_string()));
                }
            }
        }
        Ok(Self {
            documents,
            type_set,
            warnings: 0,
        })
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }
}

/// Slices `text` by char offsets. `None` when out of range or inverted.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let b_start = indices.by_ref().nth(start)?;
    let b_end = if end == start {
        b_start
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[b_start..b_end])
}

/// Converts a byte offset of `text` to a char offset.
pub(crate) fn byte_to_char(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

#[derive(Deserialize, Serialize)]
struct JsonlEntity {
    surface: String,
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    entity_type: String,
}

#[derive(Deserialize, Serialize)]
struct JsonlRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entities: Option<Vec<JsonlEntity>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads one JSON record per line: `{id, text, entities?: [{surface, start, end, type}]}`.
///
/// The type set is every type seen, in order of first appearance.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut documents = Vec::new();
    let mut type_set: Vec<EntityType> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        let doc = match rec.entities {
            None => Document::unlabeled(rec.id, rec.text),
            Some(ents) => {
                let mut gold = Vec::with_capacity(ents.len());
                for e in ents {
                    let ty = EntityType::new(e.entity_type).map_err(|err| CorpusError::MalformedLine {
                        line: line_no,
                        message: err.to_string(),
                    })?;
                    if !type_set.contains(&ty) {
                        type_set.push(ty.clone());
                    }
                    gold.push(Mention::new(e.surface, e.start, e.end, ty));
                }
                Document::labeled(rec.id, rec.text, gold)?
            }
        };
        documents.push(doc);
    }
    Dataset::new(documents, type_set)
}

pub fn write_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for d in &dataset.documents {
        let rec = JsonlRecord {
            id: d.id.clone(),
            text: d.text.clone(),
            entities: d.gold.as_ref().map(|g| {
                g.iter()
                    .map(|m| JsonlEntity {
                        surface: m.surface.clone(),
                        start: m.start,
                        end: m.end,
                        entity_type: m.entity_type.to_string(),
                    })
                    .collect()
            }),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads whitespace-column CoNLL with the BIO tag in the last column.
pub fn load_conll(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    parse_conll(&content, &path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
}

/// Parses CoNLL text. Document ids are `<prefix>-<sentence index>`.
pub fn parse_conll(content: &str, id_prefix: &str) -> Result<Dataset, CorpusError> {
    let mut builder = ConllBuilder::default();
    let mut documents = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            if let Some(doc) = builder.finish(id_prefix, documents.len())? {
                documents.push(doc);
            }
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(CorpusError::BadTag {
                line: line_no,
                tag: line.to_owned(),
            });
        }
        builder.push(cols[0], cols[cols.len() - 1], line_no)?;
    }
    if let Some(doc) = builder.finish(id_prefix, documents.len())? {
        documents.push(doc);
    }
    let warnings = builder.warnings;
    let mut ds = Dataset::new(documents, builder.type_set)?;
    ds.warnings = warnings;
    Ok(ds)
}

#[derive(Default)]
struct ConllBuilder {
    text: String,
    chars: usize,
    tokens: usize,
    open: Option<(usize, usize, EntityType)>,
    mentions: Vec<(usize, usize, EntityType)>,
    type_set: Vec<EntityType>,
    warnings: usize,
}

impl ConllBuilder {
    fn push(&mut self, token: &str, tag: &str, line: usize) -> Result<(), CorpusError> {
        if self.tokens > 0 {
            self.text.push(' ');
            self.chars += 1;
        }
        let start = self.chars;
        self.text.push_str(token);
        self.chars += token.chars().count();
        self.tokens += 1;
        let end = self.chars;

        let bad = || CorpusError::BadTag {
            line,
            tag: tag.to_owned(),
        };
        if tag == "O" {
            self.close();
            return Ok(());
        }
        let (prefix, label) = tag.split_once('-').ok_or_else(bad)?;
        let ty = EntityType::new(label).map_err(|_| bad())?;
        match prefix {
            "B" => {
                self.close();
                self.open_new(start, end, ty);
            }
            "I" => match &mut self.open {
                Some((_, e, t)) if *t == ty => *e = end,
                _ => {
                    self.warnings += 1;
                    self.close();
                    self.open_new(start, end, ty);
                }
            },
            _ => return Err(bad()),
        }
        Ok(())
    }

    fn open_new(&mut self, start: usize, end: usize, ty: EntityType) {
        if !self.type_set.contains(&ty) {
            self.type_set.push(ty.clone());
        }
        self.open = Some((start, end, ty));
    }

    fn close(&mut self) {
        if let Some(m) = self.open.take() {
            self.mentions.push(m);
        }
    }

    fn finish(&mut self, prefix: &str, index: usize) -> Result<Option<Document>, CorpusError> {
        self.close();
        if self.tokens == 0 {
            return Ok(None);
        }
        let text = std::mem::take(&mut self.text);
        let gold = std::mem::take(&mut self.mentions)
            .into_iter()
            .map(|(s, e, t)| {
                let surface = char_slice(&text, s, e).expect("offsets computed from text").to_owned();
                Mention::new(surface, s, e, t)
            })
            .collect();
        self.chars = 0;
        self.tokens = 0;
        let id = if prefix.is_empty() {
            format!("s{index}")
        } else {
            format!("{prefix}-{index}")
        };
        Document::labeled(id, text, gold).map(Some)
    }
}

/// Reads type definitions from JSON: `[{"type": "PER", "description": "..."}]`.
pub fn load_type_definitions(path: impl AsRef<Path>) -> Result<Vec<TypeDefinition>, CorpusError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    let defs: Vec<TypeDefinition> = serde_json::from_str(&content).map_err(|e| CorpusError::MalformedLine {
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok(defs)
}
