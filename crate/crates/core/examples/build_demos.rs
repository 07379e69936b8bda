//! Builds a contrastive support set from the fixture training documents and
//! prints each demonstration as it appears in a prompt.
//!
//! cargo run --example build_demos -- [seed] [count]

use std::path::Path;

use kdr_core::corpus::{load_jsonl, load_type_definitions, EntityType};
use kdr_core::demobuild::{build_support_set, serialize_demonstration, NegativeConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);

    let train = load_jsonl(fixtures.join("train.jsonl"))?;
    let types: Vec<EntityType> =
        load_type_definitions(fixtures.join("types.json"))?.into_iter().map(|d| d.entity_type).collect();
    let demos = build_support_set(&train.documents, &types, count, seed, &NegativeConfig::default())?;
    for d in &demos {
        println!("--- seed {}", d.seed);
        println!("{}", serialize_demonstration(d));
        for n in d.negatives() {
            println!("  negative {:?}: {} [{}]", n.negative_kind.unwrap(), n.surface, n.entity_type);
        }
    }
    Ok(())
}
