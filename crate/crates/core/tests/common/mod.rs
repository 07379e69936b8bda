#![allow(dead_code)]

use std::path::{Path, PathBuf};

use kdr_core::agents::{Pipeline, PipelineConfig};
use kdr_core::backend::{load_rules, ChatBackend, ScriptedRule};
use kdr_core::cli::RunConfig;
use kdr_core::corpus::{self, Dataset, TypeDefinition};
use kdr_core::demobuild::{self, Demonstration};
use kdr_core::prompting::Templates;
use kdr_core::wiki::{KnowledgeRetriever, SnapshotCache};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub struct Fixture {
    pub types: Vec<TypeDefinition>,
    pub dataset: Dataset,
    pub demos: Vec<Demonstration>,
    pub rules: Vec<ScriptedRule>,
    pub snapshot: SnapshotCache,
    pub templates: Templates,
}

impl Fixture {
    pub fn load() -> Self {
        let types = corpus::load_type_definitions(fixture("types.json")).unwrap();
        let raw = corpus::load_jsonl(fixture("docs.jsonl")).unwrap();
        let dataset = Dataset::new(raw.documents, types.iter().map(|d| d.entity_type.clone()).collect()).unwrap();
        Self {
            types,
            dataset,
            demos: demobuild::load_support_set(fixture("support.jsonl")).unwrap(),
            rules: load_rules(fixture("rules.json")).unwrap(),
            snapshot: SnapshotCache::load(fixture("snapshot.jsonl")).unwrap(),
            templates: Templates::default(),
        }
    }

    pub fn retriever(&self) -> KnowledgeRetriever {
        KnowledgeRetriever::offline(self.snapshot.clone())
    }

    pub fn pipeline<'a>(
        &'a self,
        config: PipelineConfig,
        retriever: Option<&'a KnowledgeRetriever>,
        backend: &'a dyn ChatBackend,
    ) -> Pipeline<'a> {
        Pipeline::new(config, &self.templates, &self.types, &self.demos, retriever, backend).unwrap()
    }
}

/// The scripted fixture run config, with paths anchored to the crate and
/// output redirected to `out`.
pub fn run_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::load(fixture("run.toml")).unwrap();
    c.rebase(Path::new(env!("CARGO_MANIFEST_DIR")));
    c.out_dir = out.to_path_buf();
    c
}
