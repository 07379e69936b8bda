//! Runs one sentence through the pipeline against a live OpenAI-compatible
//! endpoint with online Wikipedia retrieval.
//!
//! KDR_API_KEY=... cargo run --example live_openai -- ["sentence"]
//!
//! KDR_BASE_URL and KDR_MODEL override the endpoint and model.

use std::path::Path;

use kdr_core::agents::{Pipeline, PipelineConfig};
use kdr_core::backend::{OpenAiBackend, OpenAiConfig, API_KEY_ENV};
use kdr_core::corpus::{load_type_definitions, Document};
use kdr_core::demobuild::load_support_set;
use kdr_core::prompting::Templates;
use kdr_core::wiki::{HttpTransport, KnowledgeRetriever, MediaWikiClient, SnapshotCache, DEFAULT_API_URL};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if std::env::var(API_KEY_ENV).map_or(true, |k| k.is_empty()) {
        eprintln!("set {API_KEY_ENV} to run this example");
        std::process::exit(2);
    }
    let text = std::env::args().nth(1).unwrap_or_else(|| "Jordan signed with the Chicago Bulls.".to_owned());
    let base_url = std::env::var("KDR_BASE_URL").unwrap_or_else(|_| "https://api.openai.com".to_owned());
    let model = std::env::var("KDR_MODEL").unwrap_or_else(|_| "gpt-4o".to_owned());

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let types = load_type_definitions(fixtures.join("types.json"))?;
    let demos = load_support_set(fixtures.join("support.jsonl"))?;
    let backend = OpenAiBackend::new(OpenAiConfig::new(base_url))?;
    let transport = HttpTransport::new(DEFAULT_API_URL)?;
    let retriever = KnowledgeRetriever::online(SnapshotCache::new(None), Box::new(MediaWikiClient::new(transport)));
    let templates = Templates::default();
    let config = PipelineConfig {
        model_name: model,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(config, &templates, &types, &demos, Some(&retriever), &backend)?;

    let trace = pipeline.run(&Document::unlabeled("live", text));
    if let Some(reason) = &trace.failed {
        eprintln!("failed: {reason}");
        std::process::exit(3);
    }
    println!("queries: {:?}", trace.planner.queries);
    for s in &trace.snippets {
        println!("knowledge: [{}] {}", s.title, s.source_url);
    }
    for n in &trace.notes {
        println!("note: {}: {}", n.surface, n.interpretation);
    }
    for m in &trace.final_pred {
        println!("{} [{}] at {}..{}", m.surface, m.entity_type, m.start, m.end);
    }
    for w in &trace.warnings {
        println!("warning ({:?}): {}", w.stage, w.message);
    }
    println!("{} model calls, {} Wikipedia requests", trace.backend_calls, retriever.network_calls());
    Ok(())
}
