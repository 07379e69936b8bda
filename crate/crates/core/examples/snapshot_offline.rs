//! Replays Wikipedia lookups from a frozen snapshot. Hits, confirmed misses
//! and queries the snapshot never saw behave differently.
//!
//! cargo run --example snapshot_offline -- ["query" ...]

use std::path::Path;

use kdr_core::wiki::{KnowledgeRetriever, SnapshotCache};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/snapshot.jsonl");
    let snapshot = SnapshotCache::load(&path)?;
    println!(
        "snapshot: {} entries, {} hits, cutoff {:?}, hash {}",
        snapshot.len(),
        snapshot.hits(),
        snapshot.header.cutoff,
        &snapshot.content_hash()[..12]
    );
    let retriever = KnowledgeRetriever::offline(snapshot);
    let mut queries: Vec<String> = std::env::args().skip(1).collect();
    if queries.is_empty() {
        queries = ["BRCA1", "Washington", "White House", "Hepatitis B virus"].map(String::from).to_vec();
    }
    for q in &queries {
        match retriever.retrieve_cached(q) {
            Ok(Some(s)) => {
                let note = if s.disambiguation_page { " (disambiguation page)" } else { "" };
                println!("{q:?}: [{}]{note} {}", s.title, s.summary);
            }
            Ok(None) => println!("{q:?}: no article"),
            Err(e) => println!("{q:?}: {e}"),
        }
    }
    println!("network calls: {}", retriever.network_calls());
    Ok(())
}
