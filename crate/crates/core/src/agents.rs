//! The two-stage agent pipeline.
//!
//! Stage one plans retrieval and disambiguation, fetches knowledge, writes
//! disambiguation notes and assembles the enriched prompt. Stage two makes the
//! initial prediction, reflects on it, and re-predicts. Each stage degrades to
//! a defined fallback on malformed model output; only backend or snapshot
//! failures abort a document.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest};
use crate::corpus::{Document, EntityType, Mention, TypeDefinition};
use crate::demobuild::Demonstration;
use crate::parseout::{self, ReflectionFinding, NONE_TOKEN};
use crate::prompting::{self, InitialParts, PromptBundle, PromptError, PromptSection, Templates};
use crate::wiki::{normalize_query, KnowledgeRetriever, KnowledgeSnippet, WikiError};

pub const MAX_QUERIES: usize = 5;
pub const MAX_AMBIGUOUS: usize = 5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] WikiError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguousMention {
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_types: Option<Vec<EntityType>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerOutput {
    pub queries: Vec<String>,
    pub ambiguous_mentions: Vec<AmbiguousMention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisambiguationNote {
    pub surface: String,
    pub interpretation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Planner,
    Retrieval,
    Disambiguation,
    Initial,
    Reflection,
    Correction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub stage: Stage,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub doc_id: String,
    pub planner: PlannerOutput,
    pub snippets: Vec<KnowledgeSnippet>,
    pub notes: Vec<DisambiguationNote>,
    pub initial_raw: String,
    pub initial_pred: Vec<Mention>,
    pub reflection_raw: String,
    pub findings: Vec<ReflectionFinding>,
    pub final_raw: String,
    pub final_pred: Vec<Mention>,
    pub prompts: Vec<PromptRecord>,
    pub warnings: Vec<Warning>,
    pub backend_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
}

impl PipelineTrace {
    pub fn is_failed(&self) -> bool {
        self.failed.is_some()
    }

    pub fn warnings_for(&self, stage: Stage) -> usize {
        self.warnings.iter().filter(|w| w.stage == stage).count()
    }

    /// Knowledge section exactly as it went into the initial prompt.
    pub fn knowledge_text(&self) -> Option<String> {
        prompting::compose_knowledge_section(&self.snippets)
            .ok()
            .flatten()
            .map(|s| s.text)
    }
}

/// Component switches matching the ablation rows: `-Reflection`, `-KRA`,
/// `-DA`. Negative demonstrations (`-NS`) are a property of the support set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub reflection: bool,
    pub retrieval: bool,
    pub disambiguation: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            reflection: true,
            retrieval: true,
            disambiguation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_queries: usize,
    pub max_ambiguous: usize,
    pub ablation: Ablation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model_name: "gpt-4o".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            max_queries: MAX_QUERIES,
            max_ambiguous: MAX_AMBIGUOUS,
            ablation: Ablation::default(),
        }
    }
}

/// Output of one model-backed stage.
#[derive(Debug, Clone)]
pub struct StageOutput<T> {
    pub value: T,
    pub raw: String,
    pub warnings: Vec<String>,
    pub fingerprint: Option<String>,
}

impl<T> StageOutput<T> {
    fn silent(value: T) -> Self {
        Self {
            value,
            raw: String::new(),
            warnings: Vec::new(),
            fingerprint: None,
        }
    }
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")).unwrap_or(t).trim()
}

fn strip_keyword<'a>(line: &'a str, keyword: &str) -> Option<&'a str> {
    let head = line.get(..keyword.len())?;
    head.eq_ignore_ascii_case(keyword).then(|| line[keyword.len()..].trim())
}

/// Parses `QUERY:` and `AMBIGUOUS:` lines, then applies the caps. Ambiguous
/// surfaces that do not occur in the text are dropped.
pub fn parse_planner_response(
    raw: &str,
    doc_text: &str,
    type_set: &[EntityType],
    max_queries: usize,
    max_ambiguous: usize,
) -> (PlannerOutput, Vec<String>) {
    let mut out = PlannerOutput::default();
    let mut warnings = Vec::new();
    let mut seen_q = HashSet::new();
    let mut seen_a = HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        let l = strip_bullet(line);
        if l.is_empty() || l == NONE_TOKEN {
            continue;
        }
        if let Some(q) = strip_keyword(l, "QUERY:") {
            if q.is_empty() {
                warnings.push(format!("line {line_no}: empty query"));
            } else if seen_q.insert(normalize_query(q)) {
                out.queries.push(q.to_owned());
            } else {
                warnings.push(format!("line {line_no}: duplicate query {q:?}"));
            }
        } else if let Some(rest) = strip_keyword(l, "AMBIGUOUS:") {
            let (surface, types) = match rest.split_once('|') {
                Some((s, t)) => (s.trim(), Some(t)),
                None => (rest.trim(), None),
            };
            if surface.is_empty() || !doc_text.contains(surface) {
                warnings.push(format!("line {line_no}: ambiguous mention {surface:?} not in text, dropped"));
                continue;
            }
            let candidate_types = types.map(|t| {
                t.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .filter_map(|s| match type_set.iter().find(|ty| ty.as_str() == s) {
                        Some(ty) => Some(ty.clone()),
                        None => {
                            warnings.push(format!("line {line_no}: unknown candidate type {s:?}"));
                            None
                        }
                    })
                    .collect::<Vec<_>>()
            });
            let candidate_types = candidate_types.filter(|ts| !ts.is_empty());
            if seen_a.insert(surface.to_owned()) {
                out.ambiguous_mentions.push(AmbiguousMention {
                    surface: surface.to_owned(),
                    candidate_types,
                });
            } else {
                warnings.push(format!("line {line_no}: duplicate ambiguous mention {surface:?}"));
            }
        } else {
            warnings.push(format!("line {line_no}: unrecognized planner line"));
        }
    }
    for q in out.queries.drain(max_queries.min(out.queries.len())..) {
        warnings.push(format!("query {q:?} over the cap of {max_queries}, dropped"));
    }
    for m in out
        .ambiguous_mentions
        .drain(max_ambiguous.min(out.ambiguous_mentions.len())..)
    {
        warnings.push(format!(
            "ambiguous mention {:?} over the cap of {max_ambiguous}, dropped",
            m.surface
        ));
    }
    (out, warnings)
}

/// Parses `<surface>: <interpretation>` lines against the flagged mentions.
/// Lines that answer no flagged mention, or repeat an answer, are discarded
/// with a warning; flagged mentions left unanswered are reported in flag order.
pub fn parse_disambiguation(raw: &str, flagged: &[AmbiguousMention]) -> (Vec<DisambiguationNote>, Vec<String>) {
    let mut by_len: Vec<&AmbiguousMention> = flagged.iter().collect();
    by_len.sort_by_key(|m| std::cmp::Reverse(m.surface.len()));
    let mut found: Vec<Option<String>> = vec![None; flagged.len()];
    let mut warnings = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let l = strip_bullet(line);
        if l.is_empty() {
            continue;
        }
        let hit = by_len.iter().find_map(|m| {
            let rest = l.strip_prefix(m.surface.as_str())?.trim_start();
            let interp = rest.strip_prefix(':')?.trim();
            (!interp.is_empty()).then_some((m.surface.as_str(), interp))
        });
        match hit {
            Some((surface, interp)) => {
                let idx = flagged.iter().position(|m| m.surface == surface).expect("from flagged");
                if found[idx].is_some() {
                    warnings.push(format!("line {}: second interpretation of {surface:?} ignored", i + 1));
                } else {
                    found[idx] = Some(interp.to_owned());
                }
            }
            None => warnings.push(format!("line {}: answers no flagged mention, ignored", i + 1)),
        }
    }
    let mut notes = Vec::new();
    for (m, f) in flagged.iter().zip(found) {
        match f {
            Some(interpretation) => notes.push(DisambiguationNote {
                surface: m.surface.clone(),
                interpretation,
            }),
            None => warnings.push(format!("no interpretation returned for {:?}", m.surface)),
        }
    }
    (notes, warnings)
}

/// Runs the agents for one type inventory and support set.
pub struct Pipeline<'a> {
    pub config: PipelineConfig,
    templates: &'a Templates,
    type_set: Vec<EntityType>,
    type_section: PromptSection,
    demo_section: PromptSection,
    retriever: Option<&'a KnowledgeRetriever>,
    backend: &'a dyn ChatBackend,
    calls: AtomicUsize,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: PipelineConfig,
        templates: &'a Templates,
        type_defs: &[TypeDefinition],
        demos: &[Demonstration],
        retriever: Option<&'a KnowledgeRetriever>,
        backend: &'a dyn ChatBackend,
    ) -> Result<Self, PromptError> {
        Ok(Self {
            type_set: type_defs.iter().map(|d| d.entity_type.clone()).collect(),
            type_section: prompting::compose_type_section(type_defs)?,
            demo_section: prompting::compose_demo_section(demos)?,
            config,
            templates,
            retriever,
            backend,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn type_set(&self) -> &[EntityType] {
        &self.type_set
    }

    /// Backend calls issued by this pipeline across all documents.
    pub fn total_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn call(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        let request = ChatRequest {
            model_name: self.config.model_name.clone(),
            messages: vec![ChatMessage::user(bundle.rendered.clone())],
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
        };
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.backend.complete(&request)?.text)
    }

    pub fn plan(&self, doc: &Document) -> Result<StageOutput<PlannerOutput>, PipelineError> {
        let bundle = prompting::assemble_planner_prompt(
            doc,
            &self.type_section,
            self.templates,
            &self.type_set,
            self.config.max_queries,
            self.config.max_ambiguous,
        )?;
        let raw = self.call(&bundle)?;
        let (value, warnings) = parse_planner_response(
            &raw,
            &doc.text,
            &self.type_set,
            self.config.max_queries,
            self.config.max_ambiguous,
        );
        Ok(StageOutput {
            value,
            raw,
            warnings,
            fingerprint: Some(bundle.fingerprint),
        })
    }

    /// Top-hit snippet per query, in query order; misses are skipped.
    pub fn retrieve(&self, queries: &[String]) -> Result<StageOutput<Vec<KnowledgeSnippet>>, PipelineError> {
        let mut out = StageOutput::silent(Vec::new());
        if queries.is_empty() {
            return Ok(out);
        }
        let Some(retriever) = self.retriever else {
            out.warnings.push("no knowledge retriever configured; queries ignored".into());
            return Ok(out);
        };
        for q in queries {
            match retriever.retrieve_cached(q)? {
                Some(s) => out.value.push(s),
                None => out.warnings.push(format!("no page found for query {q:?}")),
            }
        }
        Ok(out)
    }

    pub fn disambiguate(
        &self,
        doc: &Document,
        ambiguous: &[AmbiguousMention],
    ) -> Result<StageOutput<Vec<DisambiguationNote>>, PipelineError> {
        if ambiguous.is_empty() {
            return Ok(StageOutput::silent(Vec::new()));
        }
        let bundle = prompting::assemble_disambiguation_prompt(doc, ambiguous, self.templates)?;
        let raw = self.call(&bundle)?;
        let (value, warnings) = parse_disambiguation(&raw, ambiguous);
        Ok(StageOutput {
            value,
            raw,
            warnings,
            fingerprint: Some(bundle.fingerprint),
        })
    }

    pub fn initial_prompt(
        &self,
        doc: &Document,
        snippets: &[KnowledgeSnippet],
        notes: &[DisambiguationNote],
    ) -> Result<PromptBundle, PromptError> {
        let parts = InitialParts {
            type_defs: Some(self.type_section.clone()),
            demos: Some(self.demo_section.clone()),
            knowledge: prompting::compose_knowledge_section(snippets)?,
            disambiguation: prompting::compose_disambiguation_section(notes)?,
        };
        prompting::assemble_initial_prompt(doc, &parts, self.templates, &self.type_set)
    }

    fn predict(&self, doc: &Document, raw: &str) -> (Vec<Mention>, Vec<String>, bool) {
        let (pairs, mut warnings) = parseout::parse_mentions(raw, &self.type_set);
        let explicit_none = raw.lines().any(|l| l.trim() == NONE_TOKEN);
        let parsed_anything = !pairs.is_empty() || explicit_none;
        let (mentions, ground_warnings) = parseout::ground(&pairs, &doc.text);
        warnings.extend(ground_warnings);
        (mentions, warnings, parsed_anything)
    }

    pub fn infer_initial(
        &self,
        doc: &Document,
        bundle: &PromptBundle,
    ) -> Result<StageOutput<Vec<Mention>>, PipelineError> {
        let raw = self.call(bundle)?;
        let (value, warnings, _) = self.predict(doc, &raw);
        Ok(StageOutput {
            value,
            raw,
            warnings,
            fingerprint: Some(bundle.fingerprint.clone()),
        })
    }

    fn prior_output<'r>(initial_raw: &'r str, warnings: &mut Vec<String>) -> &'r str {
        if initial_raw.trim().is_empty() {
            warnings.push("initial output was empty; reflecting on NONE".into());
            NONE_TOKEN
        } else {
            initial_raw
        }
    }

    pub fn reflect(
        &self,
        doc: &Document,
        initial_raw: &str,
    ) -> Result<StageOutput<Vec<ReflectionFinding>>, PipelineError> {
        let mut warnings = Vec::new();
        let prior = Self::prior_output(initial_raw, &mut warnings);
        let guide = prompting::reflection_guide(self.templates, &self.type_set);
        let bundle = prompting::assemble_reflection_prompt(doc, prior, &guide, self.templates)?;
        let raw = self.call(&bundle)?;
        let (value, parse_warnings) = parseout::parse_reflection(&raw);
        warnings.extend(parse_warnings);
        Ok(StageOutput {
            value,
            raw,
            warnings,
            fingerprint: Some(bundle.fingerprint),
        })
    }

    /// Second prediction. When the output holds neither a valid entity line
    /// nor `NONE`, the initial prediction is kept.
    pub fn correct(
        &self,
        doc: &Document,
        initial_raw: &str,
        initial_pred: &[Mention],
        reflection_raw: &str,
    ) -> Result<StageOutput<Vec<Mention>>, PipelineError> {
        let mut warnings = Vec::new();
        let prior = Self::prior_output(initial_raw, &mut Vec::new());
        let guide = prompting::reflection_guide(self.templates, &self.type_set);
        let bundle = prompting::assemble_correction_prompt(
            doc,
            prior,
            &guide,
            reflection_raw,
            self.templates,
            &self.type_set,
        )?;
        let raw = self.call(&bundle)?;
        let (mentions, parse_warnings, parsed) = self.predict(doc, &raw);
        warnings.extend(parse_warnings);
        let value = if parsed {
            mentions
        } else {
            warnings.push("FALLBACK: correction output unparseable, keeping the initial prediction".into());
            initial_pred.to_vec()
        };
        Ok(StageOutput {
            value,
            raw,
            warnings,
            fingerprint: Some(bundle.fingerprint),
        })
    }

    /// Full two-stage run for one document. Errors are recorded in the
    /// returned trace rather than returned.
    pub fn run(&self, doc: &Document) -> PipelineTrace {
        let mut trace = PipelineTrace {
            doc_id: doc.id.clone(),
            ..PipelineTrace::default()
        };
        if let Err(e) = self.run_stages(doc, &mut trace) {
            trace.failed = Some(e.to_string());
        }
        trace.backend_calls = trace.prompts.len();
        trace
    }

    fn run_stages(&self, doc: &Document, trace: &mut PipelineTrace) -> Result<(), PipelineError> {
        let ablation = self.config.ablation;
        let record = |trace: &mut PipelineTrace, stage: Stage, warnings: Vec<String>, fp: Option<String>| {
            trace
                .warnings
                .extend(warnings.into_iter().map(|message| Warning { stage, message }));
            if let Some(fingerprint) = fp {
                trace.prompts.push(PromptRecord { stage, fingerprint });
            }
        };

        if ablation.retrieval || ablation.disambiguation {
            let plan = self.plan(doc)?;
            record(trace, Stage::Planner, plan.warnings, plan.fingerprint);
            trace.planner = plan.value;
        }
        if ablation.retrieval {
            let k = self.retrieve(&trace.planner.queries)?;
            record(trace, Stage::Retrieval, k.warnings, None);
            trace.snippets = k.value;
        }
        if ablation.disambiguation {
            let d = self.disambiguate(doc, &trace.planner.ambiguous_mentions)?;
            record(trace, Stage::Disambiguation, d.warnings, d.fingerprint);
            trace.notes = d.value;
        }

        let bundle = self.initial_prompt(doc, &trace.snippets, &trace.notes)?;
        let init = self.infer_initial(doc, &bundle)?;
        record(trace, Stage::Initial, init.warnings, init.fingerprint);
        trace.initial_raw = init.raw;
        trace.initial_pred = init.value;

        if !ablation.reflection {
            trace.final_raw = trace.initial_raw.clone();
            trace.final_pred = trace.initial_pred.clone();
            return Ok(());
        }
        let refl = self.reflect(doc, &trace.initial_raw)?;
        record(trace, Stage::Reflection, refl.warnings, refl.fingerprint);
        trace.reflection_raw = refl.raw;
        trace.findings = refl.value;

        let corr = self.correct(doc, &trace.initial_raw, &trace.initial_pred, &trace.reflection_raw)?;
        record(trace, Stage::Correction, corr.warnings, corr.fingerprint);
        trace.final_raw = corr.raw;
        trace.final_pred = corr.value;
        Ok(())
    }

    /// Runs documents on up to `workers` threads. Traces are handed to
    /// `sink` on the calling thread as they finish; the returned list is in
    /// input order.
    pub fn run_batch(
        &self,
        docs: &[&Document],
        workers: usize,
        mut sink: impl FnMut(&PipelineTrace),
    ) -> Vec<PipelineTrace> {
        let next = AtomicUsize::new(0);
        let mut slots: Vec<Option<PipelineTrace>> = vec![None; docs.len()];
        std::thread::scope(|s| {
            let (tx, rx) = mpsc::channel::<(usize, PipelineTrace)>();
            for _ in 0..workers.clamp(1, docs.len().max(1)) {
                let tx = tx.clone();
                let next = &next;
                s.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(doc) = docs.get(i) else { break };
                    let trace = self.run(doc);
                    if tx.send((i, trace)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (i, trace) in rx {
                sink(&trace);
                slots[i] = Some(trace);
            }
        });
        slots.into_iter().map(|t| t.expect("every document traced")).collect()
    }
}
