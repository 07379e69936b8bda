//! Reads a CoNLL BIO file into documents with character-offset mentions.
//!
//! cargo run --example conll_ingest -- [path.conll]

use std::path::{Path, PathBuf};

use kdr_core::corpus::{char_slice, load_conll};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/conll/test.conll"));
    let dataset = load_conll(&path)?;
    println!("{} sentences, types {:?}, {} dangling I- tags repaired", dataset.documents.len(), dataset.type_set, dataset.warnings);
    for doc in &dataset.documents {
        println!("{}: {}", doc.id, doc.text);
        for m in doc.gold() {
            assert_eq!(char_slice(&doc.text, m.start, m.end), Some(m.surface.as_str()));
            println!("  [{}, {}) {} {}", m.start, m.end, m.entity_type, m.surface);
        }
    }
    Ok(())
}
