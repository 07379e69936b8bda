//! Runs the full plan, retrieve, disambiguate, extract, reflect and correct
//! loop over the fixture documents with a scripted model and an offline
//! Wikipedia snapshot. No network access.
//!
//! cargo run --example scripted_pipeline

use std::path::Path;

use kdr_core::agents::{Pipeline, PipelineConfig};
use kdr_core::backend::{load_rules, ScriptedBackend};
use kdr_core::corpus::{load_jsonl, load_type_definitions};
use kdr_core::demobuild::load_support_set;
use kdr_core::prompting::Templates;
use kdr_core::wiki::{KnowledgeRetriever, SnapshotCache};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let types = load_type_definitions(fixtures.join("types.json"))?;
    let docs = load_jsonl(fixtures.join("docs.jsonl"))?;
    let demos = load_support_set(fixtures.join("support.jsonl"))?;
    let backend = ScriptedBackend::new(load_rules(fixtures.join("rules.json"))?);
    let retriever = KnowledgeRetriever::offline(SnapshotCache::load(fixtures.join("snapshot.jsonl"))?);
    let templates = Templates::default();

    let pipeline = Pipeline::new(PipelineConfig::default(), &templates, &types, &demos, Some(&retriever), &backend)?;
    let refs: Vec<_> = docs.documents.iter().collect();
    for t in pipeline.run_batch(&refs, 2, |_| {}) {
        println!("{}  ({} model calls)", t.doc_id, t.backend_calls);
        let show = |ms: &[kdr_core::corpus::Mention]| {
            ms.iter().map(|m| format!("{} [{}]", m.surface, m.entity_type)).collect::<Vec<_>>().join(", ")
        };
        println!("  initial: {}", show(&t.initial_pred));
        for f in &t.findings {
            println!("  finding: {} on {:?}", f.kind.label(), f.target_surface);
        }
        println!("  final:   {}", show(&t.final_pred));
        for w in &t.warnings {
            println!("  warning ({:?}): {}", w.stage, w.message);
        }
    }
    println!("total model calls: {}", pipeline.total_calls());
    Ok(())
}
