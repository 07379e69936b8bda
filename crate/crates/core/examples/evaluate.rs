//! Scores predictions against gold: micro P/R/F1 plus the span, type,
//! spurious and omission breakdown for a single sentence, then the report
//! table for a scripted run over the fixtures.
//!
//! cargo run --example evaluate

use std::path::Path;

use kdr_core::agents::{Pipeline, PipelineConfig};
use kdr_core::backend::{load_rules, ScriptedBackend};
use kdr_core::corpus::{load_jsonl, load_type_definitions, Dataset, EntityType, Mention};
use kdr_core::demobuild::load_support_set;
use kdr_core::evalkit::{align, classify_errors, emit_report, render_table, score_micro};
use kdr_core::prompting::Templates;
use kdr_core::wiki::{KnowledgeRetriever, SnapshotCache};

fn mention(text: &str, surface: &str, ty: &str) -> Mention {
    let start = text[..text.find(surface).unwrap()].chars().count();
    Mention::new(surface, start, start + surface.chars().count(), EntityType::new(ty).unwrap())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = "Barack Obama visited Apple in Cupertino.";
    let gold = vec![
        mention(text, "Barack Obama", "PER"),
        mention(text, "Apple", "ORG"),
        mention(text, "Cupertino", "LOC"),
    ];
    let preds = vec![
        mention(text, "Obama", "PER"),
        mention(text, "Apple", "LOC"),
        mention(text, "visited", "ORG"),
    ];
    let (counts, prf) = score_micro(text, &preds, &gold)?;
    println!("{text}");
    println!("tp={} fp={} fn={}  P={:.3} R={:.3} F1={:.3}", counts.tp, counts.fp, counts.fn_, prf.precision, prf.recall, prf.f1);
    let alignment = align(&preds, &gold);
    for &(p, g, rel) in &alignment.matched {
        println!("  {:?} -> {:?}: {rel:?}", preds[p].surface, gold[g].surface);
    }
    let b = classify_errors(&alignment, &preds, &gold);
    println!("  {:?}\n", b.counts);

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let types = load_type_definitions(fixtures.join("types.json"))?;
    let raw = load_jsonl(fixtures.join("docs.jsonl"))?;
    let dataset = Dataset::new(raw.documents, types.iter().map(|d| d.entity_type.clone()).collect())?;
    let demos = load_support_set(fixtures.join("support.jsonl"))?;
    let backend = ScriptedBackend::new(load_rules(fixtures.join("rules.json"))?);
    let retriever = KnowledgeRetriever::offline(SnapshotCache::load(fixtures.join("snapshot.jsonl"))?);
    let templates = Templates::default();
    let pipeline = Pipeline::new(PipelineConfig::default(), &templates, &types, &demos, Some(&retriever), &backend)?;
    let traces: Vec<_> = dataset.documents.iter().map(|d| pipeline.run(d)).collect();
    print!("{}", render_table(&emit_report(&traces, &dataset)?));
    Ok(())
}
