use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use serde::Serialize;
use tritonjudge_core::lint::{count_missing_keyword, lint, LintConfig, LintVerdict, Strictness};
use tritonjudge_core::SourceUnit;

use crate::io::{output, write_line, CmdResult, Failure, ResultExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Level {
    L0,
    L1,
    L2,
}

impl From<Level> for Strictness {
    fn from(l: Level) -> Self {
        match l {
            Level::L0 => Strictness::Keyword,
            Level::L1 => Strictness::Decorator,
            Level::L2 => Strictness::Reachable,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Files or directories (searched recursively for `.py` files)
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "l2")]
    pub strictness: Level,
    /// Entry point names; defaults to every top-level function
    #[arg(long = "entry")]
    pub entries: Vec<String>,
    /// Print only the number of sources lacking the `@triton.jit` literal
    #[arg(long)]
    pub count_missing_keyword: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Line<'a> {
    path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<&'a LintVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.extension().is_some_and(|e| e == "py") {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut out)
                .with_context(|| format!("listing {}", p.display()))
                .input()?;
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn run(args: Args) -> CmdResult {
    let files = expand(&args.paths)?;
    let mut units = Vec::with_capacity(files.len());
    let mut unreadable = Vec::new();
    for f in &files {
        match std::fs::read_to_string(f) {
            Ok(text) => units.push(Ok(SourceUnit::new(f.display().to_string(), text))),
            Err(e) => {
                unreadable.push(f.display().to_string());
                units.push(Err(format!("{}: {e}", f.display())));
            }
        }
    }

    let mut out = output(args.out.as_ref())?;
    if args.count_missing_keyword {
        if !unreadable.is_empty() {
            return Err(crate::io::input_err(format!("unreadable: {}", unreadable.join(", "))));
        }
        let units: Vec<SourceUnit> = units.into_iter().flatten().collect();
        writeln!(out, "{}", count_missing_keyword(&units)).input()?;
        return out.flush().input();
    }

    let entries = if args.entries.is_empty() {
        LintConfig::default().entry_names
    } else {
        args.entries.clone()
    };
    let config = LintConfig::new(args.strictness.into(), entries);
    config.validate().input()?;
    let mut failed = unreadable.len();
    for (path, unit) in files.iter().zip(&units) {
        let path = path.display().to_string();
        let line = match unit.as_ref().map(|u| lint(u, &config)) {
            Ok(Ok(v)) => {
                write_line(
                    &mut out,
                    &Line {
                        path,
                        verdict: Some(&v),
                        error: None,
                    },
                )?;
                continue;
            }
            Ok(Err(e)) => {
                failed += 1;
                Line {
                    path,
                    verdict: None,
                    error: Some(e.to_string()),
                }
            }
            Err(e) => Line {
                path,
                verdict: None,
                error: Some(e.clone()),
            },
        };
        write_line(&mut out, &line)?;
    }
    out.flush().input()?;
    if failed > 0 {
        return Err(crate::io::input_err(format!(
            "{failed} of {} inputs could not be linted",
            files.len()
        )));
    }
    Ok(())
}
