#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tritonjudge_core::exec::FixtureBackend;
use tritonjudge_core::pipeline::{ingest, MockLlm, PipelineConfig, SourceRecord};

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

pub fn demo_records() -> Vec<SourceRecord> {
    ingest(&demo_dir().join("manifest.json")).expect("demo manifest ingests")
}

pub fn demo_llm() -> MockLlm {
    MockLlm::load(&demo_dir().join("llm_mock.json")).expect("demo mock loads")
}

pub fn demo_backend() -> FixtureBackend {
    FixtureBackend::new()
        .load_transcripts(&demo_dir().join("worker_transcripts.json"))
        .expect("demo transcripts load")
}

pub fn demo_config() -> PipelineConfig {
    PipelineConfig {
        seed: 7,
        ..PipelineConfig::default()
    }
}

/// Directory name under `demo/responses` for a record.
pub fn response_name(record: &SourceRecord) -> String {
    let origin = &record.host_source.origin;
    if origin.starts_with("generator:") {
        record.entry.clone()
    } else {
        Path::new(origin).file_stem().unwrap().to_string_lossy().into_owned()
    }
}
