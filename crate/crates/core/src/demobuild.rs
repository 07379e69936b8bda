//! Static few-shot support set with entity-level contrastive targets.
//!
//! Every gold pair of a demonstration is paired with exactly one negative
//! pair that imitates a realistic annotation mistake: an altered boundary, a
//! wrong type, a made-up mention, or a dropped mention.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{char_slice, Document, EntityType};
use crate::parseout::occurrences;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("document {0} has no gold mentions")]
    NoGold(String),
    #[error("surface {0:?} contains a reserved bracket character")]
    ReservedCharacter(String),
    #[error("unperturbable: {0:?} has no strict sub-span or super-span")]
    Unperturbable(String),
    #[error("no alternative type for {0}")]
    NoAlternativeType(String),
    #[error("no spurious candidate: every lexicon entry occurs in the text")]
    NoSpuriousCandidate,
    #[error("surface {0:?} does not occur in the text")]
    NotInText(String),
    #[error("{requested} demonstrations requested but only {available} annotated documents available")]
    InsufficientDocuments { requested: usize, available: usize },
    #[error("invalid demonstration: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairPolarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NegativeKind {
    BoundaryAltered,
    WrongType,
    Spurious,
    Omitted,
}

impl NegativeKind {
    pub const ALL: [NegativeKind; 4] = [
        NegativeKind::BoundaryAltered,
        NegativeKind::WrongType,
        NegativeKind::Spurious,
        NegativeKind::Omitted,
    ];

    fn tag(self) -> &'static str {
        match self {
            NegativeKind::BoundaryAltered => "boundary",
            NegativeKind::WrongType => "type",
            NegativeKind::Spurious => "spurious",
            NegativeKind::Omitted => "omission",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub surface: String,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    pub polarity: PairPolarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_kind: Option<NegativeKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl LabeledPair {
    pub fn positive(surface: impl Into<String>, entity_type: EntityType) -> Self {
        Self {
            surface: surface.into(),
            entity_type,
            polarity: PairPolarity::Positive,
            negative_kind: None,
            note: None,
        }
    }

    fn negative(surface: String, entity_type: EntityType, kind: NegativeKind, note: String) -> Self {
        Self {
            surface,
            entity_type,
            polarity: PairPolarity::Negative,
            negative_kind: Some(kind),
            note: Some(note),
        }
    }

    pub fn is_positive(&self) -> bool {
        self.polarity == PairPolarity::Positive
    }

    fn key(&self) -> (&str, &EntityType) {
        (&self.surface, &self.entity_type)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input_text: String,
    pub pairs: Vec<LabeledPair>,
    pub seed: u64,
}

impl Demonstration {
    pub fn positives(&self) -> impl Iterator<Item = &LabeledPair> {
        self.pairs.iter().filter(|p| p.is_positive())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &LabeledPair> {
        self.pairs.iter().filter(|p| !p.is_positive())
    }

    /// Checks the structural invariants of a contrastive demonstration.
    pub fn validate(&self) -> Result<(), DemoError> {
        let bad = |m: String| Err(DemoError::Invalid(m));
        for p in &self.pairs {
            if p.surface.contains(['[', ']']) {
                return Err(DemoError::ReservedCharacter(p.surface.clone()));
            }
            if p.negative_kind.is_some() == p.is_positive() {
                return bad(format!("{:?}: negative_kind must be set exactly for negatives", p.surface));
            }
        }
        for p in self.positives() {
            if !self.input_text.contains(&p.surface) {
                return bad(format!("positive {:?} not in input text", p.surface));
            }
        }
        for n in self.negatives() {
            let twin = self.positives().any(|p| p.key() == n.key());
            match n.negative_kind {
                Some(NegativeKind::Omitted) if !twin => {
                    return bad(format!("omitted {:?} does not duplicate a positive", n.surface))
                }
                Some(NegativeKind::Omitted) => {}
                _ if twin => return bad(format!("negative {:?} equals a positive pair", n.surface)),
                Some(NegativeKind::Spurious) if self.input_text.contains(&n.surface) => {
                    return bad(format!("spurious {:?} occurs in input text", n.surface))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Controls negative construction. Weights are relative draw probabilities
/// per kind in `NegativeKind::ALL` order; kinds that are impossible for a
/// given pair are excluded before drawing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeConfig {
    pub enabled: bool,
    pub weights: [f64; 4],
}

impl Default for NegativeConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            weights: [1.0; 4],
        }
    }
}

impl NegativeConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Default number of demonstrations for a type inventory.
pub fn default_demo_count(num_types: usize) -> usize {
    if num_types > 10 {
        10
    } else {
        5
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the negative paired with positive `index`.
pub fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index as u64 + 1)))
}

/// Whitespace-delimited tokens as char ranges.
fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
        n = i + 1;
    }
    if let Some(s) = start {
        spans.push((s, n));
    }
    spans
}

/// Strict sub-spans (word-level) and super-spans (one adjacent word on
/// either side, or both) of the occurrence `[start, end)`.
pub fn boundary_candidates(text: &str, start: usize, end: usize) -> (Vec<String>, Vec<String>) {
    let surface = char_slice(text, start, end).unwrap_or_default();
    let inner = word_spans(surface);
    let mut sub = BTreeSet::new();
    let n = inner.len();
    for i in 0..n {
        for j in (i + 1)..=n {
            if (i, j) != (0, n) {
                let s = char_slice(surface, inner[i].0, inner[j - 1].1).unwrap_or_default();
                sub.insert(s.to_owned());
            }
        }
    }
    let words = word_spans(text);
    let prev = words.iter().rev().find(|w| w.1 <= start).map(|w| w.0);
    let next = words.iter().find(|w| w.0 >= end).map(|w| w.1);
    let mut sup = BTreeSet::new();
    for (s, e) in [
        prev.map(|p| (p, end)),
        next.map(|q| (start, q)),
        prev.zip(next),
    ]
    .into_iter()
    .flatten()
    {
        if let Some(t) = char_slice(text, s, e) {
            sup.insert(t.to_owned());
        }
    }
    let keep = |s: &String| s != surface && !s.is_empty() && !s.contains(['[', ']']);
    (
        sub.into_iter().filter(keep).collect(),
        sup.into_iter().filter(keep).collect(),
    )
}

fn boundary_note(original: &str, altered: &str) -> String {
    if original.contains(altered) {
        format!("too narrow, the full mention is \"{original}\"")
    } else {
        format!("too broad, the mention is only \"{original}\"")
    }
}

fn draw_boundary<R: Rng + ?Sized>(
    sub: &[String],
    sup: &[String],
    rng: &mut R,
) -> Option<String> {
    let pools: Vec<&[String]> = [sub, sup].into_iter().filter(|p| !p.is_empty()).collect();
    let pool = pools.choose(rng)?;
    pool.choose(rng).cloned()
}

/// Alters the boundary of the first occurrence of `pair.surface`.
pub fn perturb_boundary<R: Rng + ?Sized>(
    doc_text: &str,
    pair: &LabeledPair,
    rng: &mut R,
) -> Result<LabeledPair, DemoError> {
    let start = *occurrences(doc_text, &pair.surface)
        .first()
        .ok_or_else(|| DemoError::NotInText(pair.surface.clone()))?;
    let end = start + pair.surface.chars().count();
    let (sub, sup) = boundary_candidates(doc_text, start, end);
    let altered = draw_boundary(&sub, &sup, rng).ok_or_else(|| DemoError::Unperturbable(pair.surface.clone()))?;
    let note = boundary_note(&pair.surface, &altered);
    Ok(LabeledPair::negative(altered, pair.entity_type.clone(), NegativeKind::BoundaryAltered, note))
}

fn type_note(surface: &str, right: &EntityType, wrong: &EntityType) -> String {
    format!("\"{surface}\" is {right} here, not {wrong}")
}

pub fn perturb_type<R: Rng + ?Sized>(
    pair: &LabeledPair,
    type_set: &[EntityType],
    rng: &mut R,
) -> Result<LabeledPair, DemoError> {
    let others: Vec<&EntityType> = type_set.iter().filter(|t| **t != pair.entity_type).collect();
    let wrong = others
        .choose(rng)
        .ok_or_else(|| DemoError::NoAlternativeType(pair.entity_type.to_string()))?;
    Ok(LabeledPair::negative(
        pair.surface.clone(),
        (*wrong).clone(),
        NegativeKind::WrongType,
        type_note(&pair.surface, &pair.entity_type, wrong),
    ))
}

fn spurious_candidates<'a>(doc_text: &str, lexicon: &'a [String]) -> Vec<&'a String> {
    lexicon
        .iter()
        .filter(|s| !s.is_empty() && !s.contains(['[', ']', '\n']) && !doc_text.contains(s.as_str()))
        .collect()
}

pub fn fabricate_spurious<R: Rng + ?Sized>(
    doc_text: &str,
    type_set: &[EntityType],
    lexicon: &[String],
    rng: &mut R,
) -> Result<LabeledPair, DemoError> {
    let candidates = spurious_candidates(doc_text, lexicon);
    let surface = candidates.choose(rng).ok_or(DemoError::NoSpuriousCandidate)?;
    let ty = type_set
        .choose(rng)
        .ok_or_else(|| DemoError::NoAlternativeType(String::new()))?;
    Ok(LabeledPair::negative(
        (*surface).clone(),
        ty.clone(),
        NegativeKind::Spurious,
        format!("\"{surface}\" does not occur in the input"),
    ))
}

fn omitted(pair: &LabeledPair) -> LabeledPair {
    LabeledPair::negative(
        pair.surface.clone(),
        pair.entity_type.clone(),
        NegativeKind::Omitted,
        "a complete answer must list this entity".to_owned(),
    )
}

/// Builds one contrastive demonstration from an annotated document.
pub fn build_demonstration(
    doc: &Document,
    type_set: &[EntityType],
    lexicon: &[String],
    seed: u64,
    config: &NegativeConfig,
) -> Result<Demonstration, DemoError> {
    let gold = doc.gold();
    if gold.is_empty() {
        return Err(DemoError::NoGold(doc.id.clone()));
    }
    let positives: Vec<LabeledPair> = gold
        .iter()
        .map(|m| {
            if m.surface.contains(['[', ']']) {
                Err(DemoError::ReservedCharacter(m.surface.clone()))
            } else {
                Ok(LabeledPair::positive(m.surface.clone(), m.entity_type.clone()))
            }
        })
        .collect::<Result<_, _>>()?;
    let mut pairs = positives.clone();
    if config.enabled {
        let is_positive = |s: &str, t: &EntityType| positives.iter().any(|p| p.surface == s && p.entity_type == *t);
        for (idx, (m, pos)) in gold.iter().zip(&positives).enumerate() {
            let mut rng = pair_rng(seed, idx);
            let (sub, sup) = boundary_candidates(&doc.text, m.start, m.end);
            let sub: Vec<String> = sub.into_iter().filter(|s| !is_positive(s, &m.entity_type)).collect();
            let sup: Vec<String> = sup.into_iter().filter(|s| !is_positive(s, &m.entity_type)).collect();
            let alt_types: Vec<EntityType> = type_set
                .iter()
                .filter(|t| !is_positive(&m.surface, t))
                .cloned()
                .collect();
            let admissible = [
                !sub.is_empty() || !sup.is_empty(),
                !alt_types.is_empty(),
                !spurious_candidates(&doc.text, lexicon).is_empty() && !type_set.is_empty(),
                true,
            ];
            let kinds: Vec<(NegativeKind, f64)> = NegativeKind::ALL
                .into_iter()
                .filter(|k| admissible[k.index()] && config.weights[k.index()] > 0.0)
                .map(|k| (k, config.weights[k.index()]))
                .collect();
            let kind = weighted_choice(&kinds, &mut rng).unwrap_or(NegativeKind::Omitted);
            let negative = match kind {
                NegativeKind::BoundaryAltered => {
                    let altered = draw_boundary(&sub, &sup, &mut rng).expect("admissible");
                    let note = boundary_note(&m.surface, &altered);
                    LabeledPair::negative(altered, m.entity_type.clone(), kind, note)
                }
                NegativeKind::WrongType => {
                    // alt_types already excludes every type that would recreate a gold pair
                    let wrong = alt_types.choose(&mut rng).expect("admissible").clone();
                    LabeledPair::negative(
                        m.surface.clone(),
                        wrong.clone(),
                        kind,
                        type_note(&m.surface, &m.entity_type, &wrong),
                    )
                }
                NegativeKind::Spurious => fabricate_spurious(&doc.text, type_set, lexicon, &mut rng)?,
                NegativeKind::Omitted => omitted(pos),
            };
            pairs.push(negative);
        }
    }
    let demo = Demonstration {
        input_text: doc.text.clone(),
        pairs,
        seed,
    };
    demo.validate()?;
    Ok(demo)
}

fn weighted_choice<R: Rng + ?Sized>(items: &[(NegativeKind, f64)], rng: &mut R) -> Option<NegativeKind> {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    if items.is_empty() || total <= 0.0 {
        return None;
    }
    let mut x = rng.random_range(0.0..total);
    for &(k, w) in items {
        if x < w {
            return Some(k);
        }
        x -= w;
    }
    items.last().map(|(k, _)| *k)
}

/// Builds `count` demonstrations from the first annotated documents. The
/// spurious lexicon for each is the gold surfaces of the other documents.
pub fn build_support_set(
    docs: &[Document],
    type_set: &[EntityType],
    count: usize,
    seed: u64,
    config: &NegativeConfig,
) -> Result<Vec<Demonstration>, DemoError> {
    let chosen: Vec<&Document> = docs.iter().filter(|d| !d.gold().is_empty()).take(count).collect();
    if chosen.len() < count {
        return Err(DemoError::InsufficientDocuments {
            requested: count,
            available: chosen.len(),
        });
    }
    chosen
        .iter()
        .enumerate()
        .map(|(i, doc)| {
            let mut lexicon: Vec<String> = chosen
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, d)| d.gold().iter().map(|m| m.surface.clone()))
                .collect();
            lexicon.sort();
            lexicon.dedup();
            build_demonstration(doc, type_set, &lexicon, splitmix64(seed ^ i as u64), config)
        })
        .collect()
}

/// Renders one demonstration in the prompt grammar.
pub fn serialize_demonstration(demo: &Demonstration) -> String {
    let mut out = format!("Input: {}\nCorrect entities:", demo.input_text);
    for p in demo.positives() {
        out.push_str(&format!("\n- {} [{}]", p.surface, p.entity_type));
    }
    let negatives: Vec<&LabeledPair> = demo.negatives().collect();
    if !negatives.is_empty() {
        out.push_str("\nIncorrect outputs (do not imitate):");
        for n in negatives {
            let kind = n.negative_kind.expect("negative has a kind");
            let note = n.note.as_deref().unwrap_or("");
            let prefix = if kind == NegativeKind::Omitted { "MISSING: " } else { "" };
            out.push_str(&format!("\n- {prefix}{} [{}] # {}: {note}", n.surface, n.entity_type, kind.tag()));
        }
    }
    out
}

pub fn write_support_set(demos: &[Demonstration], path: impl AsRef<Path>) -> Result<(), DemoError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for d in demos {
        writeln!(out, "{}", serde_json::to_string(d).expect("demonstration serializes"))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_support_set(path: impl AsRef<Path>) -> Result<Vec<Demonstration>, DemoError> {
    let content = fs::read_to_string(path)?;
    let mut demos = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let demo: Demonstration = serde_json::from_str(line).map_err(|e| DemoError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        demo.validate()?;
        demos.push(demo);
    }
    Ok(demos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Mention;

    fn ty(s: &str) -> EntityType {
        EntityType::new(s).unwrap()
    }

    fn obama_doc() -> Document {
        Document::labeled(
            "d1",
            "Barack Obama visited New York.",
            vec![
                Mention::new("Barack Obama", 0, 12, ty("PER")),
                Mention::new("New York", 21, 29, ty("LOC")),
            ],
        )
        .unwrap()
    }

    #[test]
    fn boundary_sub_and_super_spans() {
        let text = "Barack Obama spoke";
        let (sub, sup) = boundary_candidates(text, 0, 12);
        assert_eq!(sub, ["Barack", "Obama"]);
        assert_eq!(sup, ["Barack Obama spoke"]);
        let (sub, sup) = boundary_candidates(text, 7, 12);
        assert!(sub.is_empty());
        assert_eq!(sup, ["Barack Obama", "Barack Obama spoke", "Obama spoke"]);
    }

    #[test]
    fn obama_superspan_is_among_draws() {
        let pair = LabeledPair::positive("Obama", ty("PER"));
        let mut seen = BTreeSet::new();
        for s in 0..200 {
            let n = perturb_boundary("Barack Obama spoke", &pair, &mut pair_rng(s, 0)).unwrap();
            assert_eq!(n.negative_kind, Some(NegativeKind::BoundaryAltered));
            assert_eq!(n.entity_type, ty("PER"));
            seen.insert(n.surface);
        }
        assert!(seen.contains("Barack Obama"));
    }

    #[test]
    fn single_word_text_is_unperturbable() {
        let pair = LabeledPair::positive("Paris", ty("LOC"));
        let err = perturb_boundary("Paris", &pair, &mut pair_rng(0, 0)).unwrap_err();
        assert!(matches!(err, DemoError::Unperturbable(_)));
    }

    #[test]
    fn perturb_type_forced_and_error() {
        let pair = LabeledPair::positive("Apple", ty("A"));
        for s in 0..20 {
            let n = perturb_type(&pair, &[ty("A"), ty("B")], &mut pair_rng(s, 1)).unwrap();
            assert_eq!(n.entity_type, ty("B"));
        }
        assert!(matches!(
            perturb_type(&pair, &[ty("A")], &mut pair_rng(0, 0)),
            Err(DemoError::NoAlternativeType(_))
        ));
    }

    #[test]
    fn perturb_type_split_is_even() {
        let pair = LabeledPair::positive("Apple", ty("ORG"));
        let set = [ty("ORG"), ty("LOC"), ty("PER")];
        let mut rng = pair_rng(99, 0);
        let loc = (0..1000)
            .filter(|_| perturb_type(&pair, &set, &mut rng).unwrap().entity_type == ty("LOC"))
            .count();
        assert!((450..=550).contains(&loc), "LOC share {loc}");
    }

    #[test]
    fn spurious_never_in_text() {
        let set = [ty("LOC")];
        let n = fabricate_spurious("hello world", &set, &["Paris".into()], &mut pair_rng(0, 0)).unwrap();
        assert_eq!(n.surface, "Paris");
        assert!(matches!(
            fabricate_spurious("hello world", &set, &["hello".into(), "world".into()], &mut pair_rng(0, 0)),
            Err(DemoError::NoSpuriousCandidate)
        ));
        let lex: Vec<String> = ["hello", "Paris", "wor", "Berlin", "Rome"].map(String::from).to_vec();
        let mut rng = pair_rng(5, 5);
        for _ in 0..1000 {
            let n = fabricate_spurious("hello world", &set, &lex, &mut rng).unwrap();
            assert!(!"hello world".contains(&n.surface));
        }
    }

    #[test]
    fn build_pairs_one_negative_per_positive() {
        let doc = obama_doc();
        let set = [ty("PER"), ty("LOC"), ty("ORG")];
        let demo = build_demonstration(&doc, &set, &["Paris".into()], 42, &NegativeConfig::default()).unwrap();
        assert_eq!(demo.positives().count(), 2);
        assert_eq!(demo.negatives().count(), 2);
        let again = build_demonstration(&doc, &set, &["Paris".into()], 42, &NegativeConfig::default()).unwrap();
        assert_eq!(serialize_demonstration(&demo), serialize_demonstration(&again));
    }

    #[test]
    fn single_type_excludes_wrong_type() {
        let doc = Document::labeled("d", "Barack Obama spoke", vec![Mention::new("Barack Obama", 0, 12, ty("PER"))]).unwrap();
        for seed in 0..300 {
            let demo = build_demonstration(&doc, &[ty("PER")], &["Paris".into()], seed, &NegativeConfig::default()).unwrap();
            let n = demo.negatives().next().unwrap();
            assert_ne!(n.negative_kind, Some(NegativeKind::WrongType));
        }
    }

    #[test]
    fn no_gold_and_reserved_surface_errors() {
        let doc = Document::labeled("d", "nothing", vec![]).unwrap();
        assert!(matches!(
            build_demonstration(&doc, &[ty("PER")], &[], 0, &NegativeConfig::default()),
            Err(DemoError::NoGold(_))
        ));
        let doc = Document::labeled("d", "a [b] c", vec![Mention::new("[b]", 2, 5, ty("PER"))]).unwrap();
        assert!(matches!(
            build_demonstration(&doc, &[ty("PER")], &[], 0, &NegativeConfig::default()),
            Err(DemoError::ReservedCharacter(_))
        ));
    }

    #[test]
    fn serialization_layout() {
        let doc = obama_doc();
        let plain = build_demonstration(&doc, &[ty("PER"), ty("LOC")], &[], 1, &NegativeConfig::disabled()).unwrap();
        let text = serialize_demonstration(&plain);
        assert_eq!(
            text,
            "Input: Barack Obama visited New York.\nCorrect entities:\n- Barack Obama [PER]\n- New York [LOC]"
        );
        let omit = Demonstration {
            input_text: "New York".into(),
            pairs: vec![LabeledPair::positive("New York", ty("LOC")), omitted(&LabeledPair::positive("New York", ty("LOC")))],
            seed: 0,
        };
        omit.validate().unwrap();
        assert!(serialize_demonstration(&omit).ends_with(
            "Incorrect outputs (do not imitate):\n- MISSING: New York [LOC] # omission: a complete answer must list this entity"
        ));
    }

    #[test]
    fn support_set_size_and_errors() {
        let docs: Vec<Document> = (0..5).map(|i| {
            let mut d = obama_doc();
            d.id = format!("d{i}");
            d
        }).collect();
        let set = [ty("PER"), ty("LOC")];
        assert_eq!(build_support_set(&docs, &set, 5, 7, &NegativeConfig::default()).unwrap().len(), 5);
        assert!(matches!(
            build_support_set(&docs, &set, 10, 7, &NegativeConfig::default()),
            Err(DemoError::InsufficientDocuments { requested: 10, available: 5 })
        ));
        assert_eq!(default_demo_count(4), 5);
        assert_eq!(default_demo_count(12), 10);
    }
}
