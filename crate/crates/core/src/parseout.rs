//! Parsing of model free text into mention lists and reflection findings.
//!
//! Every parser here is total: malformed input never fails, it produces a
//! warning. Each discarded line (or sub-item) yields exactly one warning.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{byte_to_char, EntityType, Mention};

/// Token a model emits when it finds no entities.
pub const NONE_TOKEN: &str = "NONE";
/// Token a reflection emits when it finds no problems.
pub const NO_ISSUES_TOKEN: &str = "NO_ISSUES";

/// One `surface [TYPE]` line before grounding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPair {
    pub surface: String,
    pub type_label: EntityType,
    pub line_no: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FindingKind {
    SpanError,
    TypeError,
    Spurious,
    Omission,
}

impl FindingKind {
    pub const ALL: [FindingKind; 4] = [
        FindingKind::SpanError,
        FindingKind::TypeError,
        FindingKind::Spurious,
        FindingKind::Omission,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FindingKind::SpanError => "SpanError",
            FindingKind::TypeError => "TypeError",
            FindingKind::Spurious => "Spurious",
            FindingKind::Omission => "Omission",
        }
    }

    /// Accepts the canonical labels and their spaced heading forms
    /// ("Span Error", "Spurious Detection"), case-insensitively.
    pub fn parse(s: &str) -> Option<Self> {
        let key: String = s.chars().filter(|c| !c.is_whitespace() && *c != '_').collect::<String>().to_lowercase();
        match key.as_str() {
            "spanerror" => Some(FindingKind::SpanError),
            "typeerror" => Some(FindingKind::TypeError),
            "spurious" | "spuriousdetection" => Some(FindingKind::Spurious),
            "omission" => Some(FindingKind::Omission),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Suggestion {
    Replace { surface: String, entity_type: EntityType },
    Remove,
    Add { surface: String, entity_type: EntityType },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionFinding {
    pub kind: FindingKind,
    pub target_surface: String,
    pub justification: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<Suggestion>,
}

/// Strips one leading list marker: `-`, `*`, `•`, `1.` or `1)`.
fn strip_bullet(line: &str) -> &str {
    let t = line.trim_start();
    for b in ["- ", "* ", "• "] {
        if let Some(rest) = t.strip_prefix(b) {
            return rest;
        }
    }
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r;
        }
    }
    t
}

/// Splits `<surface> [<TYPE>] <trailing>` into surface and label.
/// Returns `None` when the line does not follow the grammar.
pub(crate) fn split_pair(body: &str) -> Option<(&str, &str)> {
    let open = body.find('[')?;
    let close = open + body[open..].find(']')?;
    let surface = body[..open].trim();
    let label = body[open + 1..close].trim();
    if surface.is_empty() || label.is_empty() {
        return None;
    }
    Some((surface, label))
}

/// Parses a `surface [TYPE]` list. Unknown types, malformed lines and
/// exact duplicates are each discarded with one warning. A `NONE` line is a
/// marker, not an item.
pub fn parse_mentions(raw: &str, type_set: &[EntityType]) -> (Vec<RawPair>, Vec<String>) {
    let mut pairs: Vec<RawPair> = Vec::new();
    let mut seen: HashSet<(String, EntityType)> = HashSet::new();
    let mut warnings = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() || line.trim() == NONE_TOKEN {
            continue;
        }
        let body = strip_bullet(line);
        let Some((surface, label)) = split_pair(body) else {
            warnings.push(format!("line {line_no}: not a `surface [TYPE]` line: {:?}", truncate(line)));
            continue;
        };
        let Some(ty) = type_set.iter().find(|t| t.as_str() == label) else {
            warnings.push(format!("line {line_no}: unknown type {label:?} for {surface:?}"));
            continue;
        };
        if !seen.insert((surface.to_owned(), ty.clone())) {
            warnings.push(format!("line {line_no}: duplicate {surface:?} [{ty}]"));
            continue;
        }
        pairs.push(RawPair {
            surface: surface.to_owned(),
            type_label: ty.clone(),
            line_no,
        });
    }
    (pairs, warnings)
}

/// Char offsets of every (possibly overlapping) occurrence of `needle`.
pub(crate) fn occurrences(text: &str, needle: &str) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = text[from..].find(needle) {
        let b = from + pos;
        out.push(byte_to_char(text, b));
        from = b + text[b..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

/// Binds pairs to character spans. The k-th pair with a given surface takes
/// the k-th occurrence of that surface. Matching is exact and case-sensitive.
pub fn ground(pairs: &[RawPair], text: &str) -> (Vec<Mention>, Vec<String>) {
    let mut cursor: HashMap<&str, usize> = HashMap::new();
    let mut cache: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut mentions = Vec::new();
    let mut warnings = Vec::new();
    for p in pairs {
        let occ = cache.entry(p.surface.as_str()).or_insert_with(|| occurrences(text, &p.surface));
        let k = cursor.entry(p.surface.as_str()).or_insert(0);
        match occ.get(*k) {
            Some(&start) => {
                *k += 1;
                let end = start + p.surface.chars().count();
                mentions.push(Mention::new(p.surface.clone(), start, end, p.type_label.clone()));
            }
            None => warnings.push(format!(
                "line {}: {:?} [{}] does not occur in the text (or all occurrences are taken)",
                p.line_no, p.surface, p.type_label
            )),
        }
    }
    mentions.sort_by(|a, b| (a.start, a.end).cmp(&(b.start, b.end)));
    (mentions, warnings)
}

fn parse_suggestion(s: &str) -> Result<Option<Suggestion>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    if s == "REMOVE" {
        return Ok(Some(Suggestion::Remove));
    }
    let (is_add, body) = match s.strip_prefix("ADD ") {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (surface, label) = split_pair(body).ok_or_else(|| format!("unreadable suggestion {s:?}"))?;
    let entity_type = EntityType::new(label).map_err(|e| e.to_string())?;
    let surface = surface.to_owned();
    Ok(Some(if is_add {
        Suggestion::Add { surface, entity_type }
    } else {
        Suggestion::Replace { surface, entity_type }
    }))
}

/// Parses `FINDING: <Kind> | <target> | <justification> | <suggestion>` lines.
/// The suggestion field is optional. `NO_ISSUES` alone means no findings.
pub fn parse_reflection(raw: &str) -> (Vec<ReflectionFinding>, Vec<String>) {
    let mut findings = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        let t = strip_bullet(line).trim();
        if t.is_empty() || t == NO_ISSUES_TOKEN {
            continue;
        }
        let Some(rest) = t.strip_prefix("FINDING:") else {
            warnings.push(format!("line {line_no}: not a FINDING line: {:?}", truncate(line)));
            continue;
        };
        let fields: Vec<&str> = rest.splitn(4, '|').map(str::trim).collect();
        if fields.len() < 3 {
            warnings.push(format!("line {line_no}: FINDING needs at least kind | target | justification"));
            continue;
        }
        let Some(kind) = FindingKind::parse(fields[0]) else {
            warnings.push(format!("line {line_no}: unknown error kind {:?}", fields[0]));
            continue;
        };
        if fields[1].is_empty() {
            warnings.push(format!("line {line_no}: FINDING without a target surface"));
            continue;
        }
        let suggestion = match fields.get(3).map(|s| parse_suggestion(s)).transpose() {
            Ok(s) => s.flatten(),
            Err(e) => {
                warnings.push(format!("line {line_no}: {e}; suggestion dropped"));
                None
            }
        };
        findings.push(ReflectionFinding {
            kind,
            target_surface: fields[1].to_owned(),
            justification: fields[2].to_owned(),
            suggestion,
        });
    }
    (findings, warnings)
}

fn truncate(s: &str) -> String {
    s.chars().take(80).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn types(names: &[&str]) -> Vec<EntityType> {
        names.iter().map(|n| EntityType::new(*n).unwrap()).collect()
    }

    #[test]
    fn parses_bracket_grammar() {
        let ts = types(&["PER", "LOC"]);
        let (pairs, w) = parse_mentions("Barack Obama [PER]\nNew York [LOC]", &ts);
        assert!(w.is_empty());
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].surface, "Barack Obama");
        assert_eq!(pairs[1].type_label.as_str(), "LOC");
        assert_eq!(pairs[1].line_no, 2);
    }

    #[test]
    fn none_token_and_bullets() {
        let ts = types(&["ORG", "LOC"]);
        assert_eq!(parse_mentions("NONE", &ts), (vec![], vec![]));
        let (pairs, w) = parse_mentions("- Apple [FRUIT]", &ts);
        assert!(pairs.is_empty());
        assert_eq!(w.len(), 1);
        let (pairs, w) = parse_mentions("1. Apple [ORG] (the company)\n* Paris [LOC]\n", &ts);
        assert!(w.is_empty());
        assert_eq!(pairs.iter().map(|p| p.surface.as_str()).collect::<Vec<_>>(), ["Apple", "Paris"]);
    }

    #[test]
    fn duplicates_are_dropped_with_warning() {
        let ts = types(&["LOC"]);
        let (pairs, w) = parse_mentions("Paris [LOC]\nParis [LOC]\njunk", &ts);
        assert_eq!(pairs.len(), 1);
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn grounding_binds_leftmost_unconsumed() {
        let loc = EntityType::new("LOC").unwrap();
        let p = |s: &str| RawPair {
            surface: s.into(),
            type_label: loc.clone(),
            line_no: 1,
        };
        let (m, w) = ground(&[p("Paris")], "Paris loves Paris");
        assert!(w.is_empty());
        assert_eq!((m[0].start, m[0].end), (0, 5));
        let (m, _) = ground(&[p("Paris"), p("Paris")], "Paris loves Paris");
        assert_eq!(m.iter().map(|m| (m.start, m.end)).collect::<Vec<_>>(), [(0, 5), (12, 17)]);
        let (m, w) = ground(&[p("Berlin")], "Paris");
        assert!(m.is_empty());
        assert_eq!(w.len(), 1);
        let (m, w) = ground(&[p("paris")], "Paris");
        assert!(m.is_empty());
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn grounding_uses_char_offsets() {
        let loc = EntityType::new("LOC").unwrap();
        let pairs = [RawPair {
            surface: "Genève".into(),
            type_label: loc,
            line_no: 1,
        }];
        let text = "Zürich und Genève";
        let (m, _) = ground(&pairs, text);
        assert_eq!((m[0].start, m[0].end), (11, 17));
        assert!(m[0].is_grounded_in(text));
    }

    #[test]
    fn reflection_grammar() {
        let (f, w) = parse_reflection("FINDING: TypeError | Apple | company not place | Apple [ORG]");
        assert!(w.is_empty());
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, FindingKind::TypeError);
        assert_eq!(
            f[0].suggestion,
            Some(Suggestion::Replace {
                surface: "Apple".into(),
                entity_type: EntityType::new("ORG").unwrap()
            })
        );
        assert_eq!(parse_reflection("NO_ISSUES"), (vec![], vec![]));
        let (f, w) = parse_reflection("FINDING: BoundaryError | x | y | z");
        assert!(f.is_empty());
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn reflection_suggestion_forms() {
        let raw = "FINDING: Spurious | Mars | not in text | REMOVE\n\
                   FINDING: Omission | Paris | missed | ADD Paris [LOC]\n\
                   FINDING: Span Error | Barack | too narrow\n\
                   FINDING: SpanError | Barack | too narrow | ???";
        let (f, w) = parse_reflection(raw);
        assert_eq!(f.len(), 4);
        assert_eq!(f[0].suggestion, Some(Suggestion::Remove));
        assert!(matches!(f[1].suggestion, Some(Suggestion::Add { .. })));
        assert_eq!(f[2].suggestion, None);
        assert_eq!(f[3].suggestion, None);
        assert_eq!(w.len(), 1);
    }
}
