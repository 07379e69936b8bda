//! Entity-level scoring and error analysis.
//!
//! F1 uses exact span-and-type matching, pooled over documents (micro).
//! The error breakdown aligns predictions to gold in four priority tiers and
//! labels every prediction and every gold mention exactly once.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{PipelineTrace, Stage};
use crate::corpus::{Dataset, EntityType, Mention};

pub const REPORT_SCHEMA: &str = "kdr-eval/1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mention {surface:?} [{start},{end}) is not grounded in the document text")]
    Ungrounded { surface: String, start: usize, end: usize },
    #[error("trace references unknown document {0:?}")]
    UnknownDocument(String),
    #[error("no traces")]
    NoTraces,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn prf(&self) -> Prf {
        Prf::from_counts(*self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// No predictions and no gold scores 1/1/1; any other zero
    /// denominator scores 0 for that ratio.
    pub fn from_counts(c: Counts) -> Self {
        let n_pred = c.tp + c.fp;
        let n_gold = c.tp + c.fn_;
        if n_pred == 0 && n_gold == 0 {
            return Self {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(c.tp, n_pred);
        let recall = ratio(c.tp, n_gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn check_grounded(text: &str, mentions: &[Mention]) -> Result<(), EvalError> {
    match mentions.iter().find(|m| !m.is_grounded_in(text)) {
        Some(m) => Err(EvalError::Ungrounded {
            surface: m.surface.clone(),
            start: m.start,
            end: m.end,
        }),
        None => Ok(()),
    }
}

/// Exact-match counts with one-to-one pairing of duplicates.
pub fn count_exact(preds: &[Mention], gold: &[Mention]) -> Counts {
    let key = |m: &Mention| (m.start, m.end, m.entity_type.clone());
    let mut remaining: HashMap<_, usize> = HashMap::new();
    for g in gold {
        *remaining.entry(key(g)).or_default() += 1;
    }
    let mut tp = 0;
    for p in preds {
        if let Some(n) = remaining.get_mut(&key(p)).filter(|n| **n > 0) {
            *n -= 1;
            tp += 1;
        }
    }
    Counts {
        tp,
        fp: preds.len() - tp,
        fn_: gold.len() - tp,
    }
}

pub fn score_micro(text: &str, preds: &[Mention], gold: &[Mention]) -> Result<(Counts, Prf), EvalError> {
    check_grounded(text, preds)?;
    check_grounded(text, gold)?;
    let c = count_exact(preds, gold);
    Ok((c, c.prf()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    /// Same span, same type.
    Exact,
    /// Same span, different type.
    TypeOnly,
    /// Overlapping span, same type.
    SpanOnly,
    /// Overlapping span, different type.
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub matched: Vec<(usize, usize, Relation)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gold: Vec<usize>,
}

fn relation(p: &Mention, g: &Mention) -> Option<Relation> {
    let same_span = p.start == g.start && p.end == g.end;
    let same_type = p.entity_type == g.entity_type;
    match (same_span, same_type, p.overlap(g) > 0) {
        (true, true, _) => Some(Relation::Exact),
        (true, false, _) => Some(Relation::TypeOnly),
        (false, true, true) => Some(Relation::SpanOnly),
        (false, false, true) => Some(Relation::Overlap),
        _ => None,
    }
}

/// Greedy one-to-one alignment by tier (Exact, TypeOnly, SpanOnly, Overlap);
/// within a tier larger overlap wins, then the smaller start offset.
pub fn align(preds: &[Mention], gold: &[Mention]) -> Alignment {
    let mut pred_used = vec![false; preds.len()];
    let mut gold_used = vec![false; gold.len()];
    let mut matched = Vec::new();
    for tier in [Relation::Exact, Relation::TypeOnly, Relation::SpanOnly, Relation::Overlap] {
        let mut cands: Vec<(usize, usize)> = Vec::new();
        for (i, p) in preds.iter().enumerate() {
            for (j, g) in gold.iter().enumerate() {
                if !pred_used[i] && !gold_used[j] && relation(p, g) == Some(tier) {
                    cands.push((i, j));
                }
            }
        }
        cands.sort_by_key(|&(i, j)| {
            let (p, g) = (&preds[i], &gold[j]);
            (std::cmp::Reverse(p.overlap(g)), p.start, g.start, i, j)
        });
        for (i, j) in cands {
            if !pred_used[i] && !gold_used[j] {
                pred_used[i] = true;
                gold_used[j] = true;
                matched.push((i, j, tier));
            }
        }
    }
    Alignment {
        matched,
        unmatched_pred: (0..preds.len()).filter(|&i| !pred_used[i]).collect(),
        unmatched_gold: (0..gold.len()).filter(|&j| !gold_used[j]).collect(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub exact: usize,
    pub span_errors: usize,
    pub type_errors: usize,
    pub spurious: usize,
    pub omissions: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl ErrorCounts {
    pub fn add(&mut self, o: ErrorCounts) {
        self.exact += o.exact;
        self.span_errors += o.span_errors;
        self.type_errors += o.type_errors;
        self.spurious += o.spurious;
        self.omissions += o.omissions;
        self.predicted += o.predicted;
        self.gold += o.gold;
    }
}

/// Rates over the number of predicted entities, plus the omission rate over
/// gold entities. Rates are `None` when their denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub counts: ErrorCounts,
    pub span_error_rate: Option<f64>,
    pub type_error_rate: Option<f64>,
    pub spurious_rate: Option<f64>,
    pub omission_rate: Option<f64>,
    pub omission_rate_over_gold: Option<f64>,
}

impl ErrorBreakdown {
    pub fn from_counts(counts: ErrorCounts) -> Self {
        let rate = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
        let p = counts.predicted;
        Self {
            span_error_rate: rate(counts.span_errors, p),
            type_error_rate: rate(counts.type_errors, p),
            spurious_rate: rate(counts.spurious, p),
            omission_rate: rate(counts.omissions, p),
            omission_rate_over_gold: rate(counts.omissions, counts.gold),
            counts,
        }
    }
}

pub fn classify_counts(alignment: &Alignment, preds: &[Mention], gold: &[Mention]) -> ErrorCounts {
    let mut c = ErrorCounts {
        predicted: preds.len(),
        gold: gold.len(),
        spurious: alignment.unmatched_pred.len(),
        omissions: alignment.unmatched_gold.len(),
        ..ErrorCounts::default()
    };
    for &(_, _, rel) in &alignment.matched {
        match rel {
            Relation::Exact => c.exact += 1,
            Relation::TypeOnly => c.type_errors += 1,
            Relation::SpanOnly | Relation::Overlap => c.span_errors += 1,
        }
    }
    c
}

pub fn classify_errors(alignment: &Alignment, preds: &[Mention], gold: &[Mention]) -> ErrorBreakdown {
    ErrorBreakdown::from_counts(classify_counts(alignment, preds, gold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub counts: Counts,
    pub micro: Prf,
    pub per_type: BTreeMap<String, Prf>,
    pub errors: ErrorBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub documents: usize,
    pub failed_documents: usize,
    /// Predictions before reflection.
    pub initial: StageReport,
    /// Predictions after reflection and correction.
    #[serde(rename = "final")]
    pub final_: StageReport,
    pub warnings: BTreeMap<Stage, usize>,
}

fn stage_report<'a>(
    items: impl Iterator<Item = (&'a str, &'a [Mention], &'a [Mention])> + Clone,
    type_set: &[EntityType],
) -> Result<StageReport, EvalError> {
    let mut counts = Counts::default();
    let mut errors = ErrorCounts::default();
    let mut per_type: BTreeMap<String, Counts> = type_set.iter().map(|t| (t.to_string(), Counts::default())).collect();
    for (text, preds, gold) in items {
        let (c, _) = score_micro(text, preds, gold)?;
        counts.add(c);
        errors.add(classify_counts(&align(preds, gold), preds, gold));
        for t in type_set {
            let p: Vec<Mention> = preds.iter().filter(|m| m.entity_type == *t).cloned().collect();
            let g: Vec<Mention> = gold.iter().filter(|m| m.entity_type == *t).cloned().collect();
            per_type.get_mut(t.as_str()).expect("seeded").add(count_exact(&p, &g));
        }
    }
    Ok(StageReport {
        counts,
        micro: counts.prf(),
        per_type: per_type.into_iter().map(|(k, c)| (k, c.prf())).collect(),
        errors: ErrorBreakdown::from_counts(errors),
    })
}

/// Scores initial and final predictions of every trace. Failed traces count
/// as empty predictions so failures cost recall.
pub fn emit_report(traces: &[PipelineTrace], dataset: &Dataset) -> Result<EvalReport, EvalError> {
    if traces.is_empty() {
        return Err(EvalError::NoTraces);
    }
    let mut rows = Vec::with_capacity(traces.len());
    for t in traces {
        let doc = dataset
            .get(&t.doc_id)
            .ok_or_else(|| EvalError::UnknownDocument(t.doc_id.clone()))?;
        rows.push((doc, t));
    }
    let initial = stage_report(
        rows.iter().map(|(d, t)| (d.text.as_str(), t.initial_pred.as_slice(), d.gold())),
        &dataset.type_set,
    )?;
    let final_ = stage_report(
        rows.iter().map(|(d, t)| (d.text.as_str(), t.final_pred.as_slice(), d.gold())),
        &dataset.type_set,
    )?;
    let mut warnings = BTreeMap::new();
    for t in traces {
        for w in &t.warnings {
            *warnings.entry(w.stage).or_insert(0) += 1;
        }
    }
    Ok(EvalReport {
        schema: REPORT_SCHEMA.into(),
        documents: traces.len(),
        failed_documents: traces.iter().filter(|t| t.is_failed()).count(),
        initial,
        final_,
        warnings,
    })
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_owned(), |v| format!("{:.2}", v * 100.0))
}

/// Plain-text table with one row per stage.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = format!(
        "documents: {} (failed: {})\n\n{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        report.documents, report.failed_documents, "", "P", "R", "F1", "Span", "Type", "Spurious", "Omission"
    );
    for (name, s) in [("w/o Reflection", &report.initial), ("+ Reflection", &report.final_)] {
        out.push_str(&format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            name,
            pct(Some(s.micro.precision)),
            pct(Some(s.micro.recall)),
            pct(Some(s.micro.f1)),
            pct(s.errors.span_error_rate),
            pct(s.errors.type_error_rate),
            pct(s.errors.spurious_rate),
            pct(s.errors.omission_rate),
        ));
    }
    out.push_str("\nError rates are shares of predicted entities (%).\n");
    out
}

pub fn write_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report).expect("report serializes") + "\n",
    )?;
    std::fs::write(dir.join("report.txt"), render_table(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ty(s: &str) -> EntityType {
        EntityType::new(s).unwrap()
    }

    fn m(s: &str, a: usize, b: usize, t: &str) -> Mention {
        Mention::new(s, a, b, ty(t))
    }

    #[test]
    fn identity_and_exact_definition() {
        let text = "Barack Obama visited New York";
        let gold = vec![m("Barack Obama", 0, 12, "PER"), m("New York", 21, 29, "LOC")];
        let (_, prf) = score_micro(text, &gold, &gold).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));
        let (c, prf) = score_micro(text, &[m("Barack", 0, 6, "PER")], &gold[..1]).unwrap();
        assert_eq!(c.tp, 0);
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_document_convention() {
        let (_, prf) = score_micro("x", &[], &[]).unwrap();
        assert_eq!(prf.f1, 1.0);
    }

    #[test]
    fn ungrounded_is_rejected() {
        assert!(matches!(
            score_micro("Paris", &[m("Rome", 0, 4, "LOC")], &[]),
            Err(EvalError::Ungrounded { .. })
        ));
    }

    #[test]
    fn duplicates_match_one_to_one() {
        let a = m("a", 0, 1, "X");
        let c = count_exact(&[a.clone(), a.clone()], &[a.clone()]);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
    }

    #[test]
    fn tiers() {
        let al = align(&[m("Barack", 0, 6, "PER")], &[m("Barack Obama", 0, 12, "PER")]);
        assert_eq!(al.matched, vec![(0, 0, Relation::SpanOnly)]);
        let al = align(&[m("Apple", 0, 5, "LOC")], &[m("Apple", 0, 5, "ORG")]);
        assert_eq!(al.matched, vec![(0, 0, Relation::TypeOnly)]);
        let al = align(&[m("Apple", 0, 5, "ORG")], &[m("Apple", 0, 5, "ORG")]);
        assert_eq!(al.matched, vec![(0, 0, Relation::Exact)]);
    }

    #[test]
    fn exact_beats_overlap_in_greedy_order() {
        // pred 0 overlaps gold 1 (same type) but gold 0 is exact for pred 1
        let gold = [m("ab", 0, 2, "X"), m("abc", 0, 3, "X")];
        let preds = [m("abc", 0, 3, "X"), m("ab", 0, 2, "X")];
        let al = align(&preds, &gold);
        assert_eq!(al.matched, vec![(0, 1, Relation::Exact), (1, 0, Relation::Exact)]);
    }

    #[test]
    fn breakdown_rates_and_absent_denominator() {
        let gold = [m("Barack Obama", 0, 12, "PER")];
        let preds = [m("Barack", 0, 6, "PER")];
        let b = classify_errors(&align(&preds, &gold), &preds, &gold);
        assert_eq!((b.counts.span_errors, b.counts.spurious, b.counts.omissions), (1, 0, 0));
        assert_eq!(b.span_error_rate, Some(1.0));
        let b = classify_errors(&align(&[], &gold), &[], &gold);
        assert_eq!(b.counts.omissions, 1);
        assert_eq!(b.omission_rate, None);
        assert_eq!(b.omission_rate_over_gold, Some(1.0));
    }
}
