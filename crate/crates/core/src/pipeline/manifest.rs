use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::exec::TestCase;
use crate::lint::keyword_check;
use crate::source::SourceUnit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    RepoScrape,
    HubScrape,
    Composed,
}

/// Builds a host-tensor function by chaining elementwise torch ops.
///
/// Unary ops apply to the running value; binary ops combine it with the next
/// parameter in round-robin order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub ops: Vec<String>,
    #[serde(default = "default_arity")]
    pub arity: usize,
}

fn default_arity() -> usize {
    1
}

const UNARY_OPS: &[&str] = &[
    "relu", "sigmoid", "tanh", "exp", "abs", "neg", "sin", "cos", "square", "gelu", "silu",
];
const BINARY_OPS: &[&str] = &["add", "sub", "mul", "maximum", "minimum"];

impl GeneratorSpec {
    pub fn render(&self, entry: &str) -> Result<String, String> {
        if self.ops.is_empty() {
            return Err("generator has no ops".into());
        }
        if self.arity == 0 {
            return Err("generator arity must be positive".into());
        }
        let params: Vec<String> = (0..self.arity).map(|i| format!("x{i}")).collect();
        let mut expr = params[0].clone();
        let mut next = 1;
        for op in &self.ops {
            let (module, name) = if op == "gelu" || op == "silu" {
                ("F", op.as_str())
            } else {
                ("torch", op.as_str())
            };
            if UNARY_OPS.contains(&name) {
                expr = format!("{module}.{name}({expr})");
            } else if BINARY_OPS.contains(&name) {
                let other = &params[next % self.arity];
                next += 1;
                expr = format!("torch.{name}({expr}, {other})");
            } else {
                return Err(format!("unsupported generator op `{op}`"));
            }
        }
        Ok(format!(
            "import torch\nimport torch.nn.functional as F\n\n\ndef {entry}({}):\n    return {expr}\n",
            params.join(", ")
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    pub entry: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub record_id: String,
    pub origin: Origin,
    pub host_source: SourceUnit,
    pub entry: String,
    pub validated: bool,
    pub test_cases: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// Whitespace-insensitive form used for deduplication: line endings unified,
/// trailing spaces and blank lines dropped.
pub fn normalize_source(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let line = line.trim_end();
        if !line.is_empty() {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

pub fn record_id_for(normalized: &str) -> String {
    format!("rec-{}", &crate::util::sha256_hex(normalized.as_bytes())[..12])
}

fn manifest_error(path: &Path, msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::Manifest(format!("{}: {msg}", path.display()))
}

fn python_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| manifest_error(&d, e))?;
        for e in entries {
            let p = e.map_err(|e| manifest_error(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "py") {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Reads a manifest (JSON list of [`ManifestEntry`]); relative paths resolve
/// against the manifest's directory.
pub fn ingest(manifest: &Path) -> Result<Vec<SourceRecord>, PipelineError> {
    let text = std::fs::read_to_string(manifest).map_err(|e| manifest_error(manifest, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| manifest_error(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    ingest_entries(&entries, base)
}

pub fn ingest_entries(entries: &[ManifestEntry], base: &Path) -> Result<Vec<SourceRecord>, PipelineError> {
    let mut sources: Vec<(String, String, &ManifestEntry)> = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        if entry.entry.trim().is_empty() {
            return Err(PipelineError::Manifest(format!("entry {i} has an empty entry name")));
        }
        match (&entry.path, &entry.generator) {
            (Some(p), None) => {
                let full = base.join(p);
                if !full.exists() {
                    return Err(manifest_error(&full, "no such file or directory"));
                }
                let files = if full.is_dir() {
                    python_files(&full)?
                } else {
                    vec![full]
                };
                for f in files {
                    let text = std::fs::read_to_string(&f).map_err(|e| manifest_error(&f, e))?;
                    sources.push((f.display().to_string(), text, entry));
                }
            }
            (None, Some(g)) => {
                let text = g
                    .render(&entry.entry)
                    .map_err(|e| PipelineError::Manifest(format!("entry {i}: {e}")))?;
                sources.push((format!("generator:{i}"), text, entry));
            }
            _ => {
                return Err(PipelineError::Manifest(format!(
                    "entry {i} must have exactly one of `path` and `generator`"
                )))
            }
        }
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (origin_name, text, entry) in sources {
        let unit = SourceUnit::new(origin_name.clone(), text);
        if unit.is_blank() {
            log::warn!("skipping {origin_name}: empty source");
            continue;
        }
        if keyword_check(&unit) {
            log::warn!("skipping {origin_name}: already contains a Triton kernel");
            continue;
        }
        let normalized = normalize_source(&unit.raw_text);
        let record_id = record_id_for(&normalized);
        if !seen.insert(record_id.clone()) {
            log::info!("dropping {origin_name}: duplicate of {record_id}");
            continue;
        }
        records.push(SourceRecord {
            record_id,
            origin: entry.origin,
            host_source: unit,
            entry: entry.entry.clone(),
            validated: false,
            test_cases: Vec::new(),
            diagnostics: Vec::new(),
        });
    }
    Ok(records)
}
