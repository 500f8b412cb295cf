//! Structural lint for candidate Triton sources.
//!
//! Three strictness levels decide whether a candidate counts as Triton code:
//! a literal `@triton.jit` substring scan, the presence of a jit-decorated
//! function, or a jit kernel reachable from the entry point through the call
//! graph. The last one rejects decoy kernels that are defined but never
//! launched.

mod parser;

use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::exec::Channel;
use crate::source::SourceUnit;

pub use parser::{parse_source, FunctionInfo, ImportBinding, ParseError, SyntaxSummary};

/// The literal searched for by [`keyword_check`].
pub const JIT_KEYWORD: &str = "@triton.jit";

/// Entry name meaning "every top-level non-kernel function plus module-level calls".
pub const ALL_TOP_LEVEL: &str = "*";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LintError {
    #[error("source {0:?} is empty")]
    EmptySource(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("L2 strictness needs at least one entry name")]
    MissingEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Strictness {
    #[serde(rename = "L0_KEYWORD")]
    Keyword,
    #[serde(rename = "L1_DECORATOR")]
    Decorator,
    #[default]
    #[serde(rename = "L2_REACHABLE")]
    Reachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LintFlag {
    NoJitKernel,
    KernelUnreachable,
    FallbackOpsPresent,
    DuplicateDef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintVerdict {
    pub keyword_hit: bool,
    pub jit_kernels: Vec<String>,
    pub reachable_kernels: Vec<String>,
    pub flags: BTreeSet<LintFlag>,
    pub is_triton: bool,
}

impl LintVerdict {
    pub fn has(&self, flag: LintFlag) -> bool {
        self.flags.contains(&flag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LintConfig {
    pub strictness: Strictness,
    pub entry_names: Vec<String>,
    pub fallback_op_denylist: Vec<String>,
}

/// Compute-heavy host tensor ops. Shape and view ops are deliberately absent.
pub const DEFAULT_FALLBACK_DENYLIST: &[&str] = &[
    "torch.conv",
    "torch.nn.functional.conv",
    "torch.nn.Conv",
    "torch.matmul",
    "torch.mm",
    "torch.bmm",
    "torch.addmm",
    "torch.baddbmm",
    "torch.einsum",
    "torch.nn.functional.linear",
    "torch.nn.Linear",
    "torch.nn.functional.batch_norm",
    "torch.nn.functional.layer_norm",
    "torch.nn.functional.group_norm",
    "torch.nn.functional.instance_norm",
    "torch.nn.BatchNorm",
    "torch.nn.LayerNorm",
    "torch.nn.GroupNorm",
    "torch.nn.InstanceNorm",
    "torch.layer_norm",
    "torch.batch_norm",
    "operator.matmul",
];

impl Default for LintConfig {
    fn default() -> Self {
        Self {
            strictness: Strictness::Reachable,
            entry_names: vec![ALL_TOP_LEVEL.to_string()],
            fallback_op_denylist: DEFAULT_FALLBACK_DENYLIST.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LintConfig {
    pub fn new(strictness: Strictness, entry_names: Vec<String>) -> Self {
        Self {
            strictness,
            entry_names,
            ..Self::default()
        }
    }

    /// Default entry set for a benchmark channel. KernelBench-style tasks enter
    /// through the model's `forward`; TritonBench-style tasks through their
    /// documented wrapper, which only the task knows, so `declared` wins when given.
    pub fn for_channel(channel: Channel, declared: &[String]) -> Self {
        let entry_names = if !declared.is_empty() {
            declared.to_vec()
        } else {
            match channel {
                Channel::KbL1 | Channel::KbL2 | Channel::KbL3 => vec!["forward".to_string()],
                _ => vec![ALL_TOP_LEVEL.to_string()],
            }
        };
        Self::new(Strictness::Reachable, entry_names)
    }

    pub fn validate(&self) -> Result<(), LintError> {
        if self.strictness == Strictness::Reachable && self.entry_names.is_empty() {
            return Err(LintError::MissingEntry);
        }
        Ok(())
    }
}

/// True iff the literal `@triton.jit` occurs anywhere, comments and strings included.
pub fn keyword_check(unit: &SourceUnit) -> bool {
    unit.raw_text.contains(JIT_KEYWORD)
}

pub fn count_missing_keyword(units: &[SourceUnit]) -> usize {
    units.iter().filter(|u| !keyword_check(u)).count()
}

fn is_jit_kernel(f: &FunctionInfo) -> bool {
    // `triton.autotune` / `triton.heuristics` only wrap a jit function
    f.has_decorator("triton.jit")
}

fn matches_entry(f: &FunctionInfo, entry: &str) -> bool {
    f.name == entry || f.bare_name() == entry
}

/// Names of functions reachable from the configured entries, entries included.
fn reachable_functions(summary: &SyntaxSummary, entries: &[String]) -> HashSet<String> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut queue: VecDeque<&FunctionInfo> = VecDeque::new();
    fn push_callee<'s>(
        summary: &'s SyntaxSummary,
        name: &str,
        queue: &mut VecDeque<&'s FunctionInfo>,
        seen: &mut HashSet<String>,
    ) {
        for f in summary.functions.iter().filter(|f| f.bare_name() == name) {
            if seen.insert(f.name.clone()) {
                queue.push_back(f);
            }
        }
    }
    for entry in entries {
        if entry == ALL_TOP_LEVEL {
            for f in summary.functions.iter().filter(|f| f.top_level && !is_jit_kernel(f)) {
                if seen.insert(f.name.clone()) {
                    queue.push_back(f);
                }
            }
            for callee in &summary.top_level_calls {
                push_callee(summary, callee, &mut queue, &mut seen);
            }
        } else {
            for f in summary.functions.iter().filter(|f| matches_entry(f, entry)) {
                if seen.insert(f.name.clone()) {
                    queue.push_back(f);
                }
            }
        }
    }
    while let Some(f) = queue.pop_front() {
        for callee in &f.callees {
            push_callee(summary, callee, &mut queue, &mut seen);
        }
    }
    seen
}

/// Lints a parsed summary. `keyword_hit` is supplied by the caller because it
/// comes from the raw text, not the parse.
pub fn lint_summary(summary: &SyntaxSummary, keyword_hit: bool, config: &LintConfig) -> LintVerdict {
    let jit_kernels: Vec<String> = summary
        .functions
        .iter()
        .filter(|f| is_jit_kernel(f))
        .map(|f| f.name.clone())
        .collect();
    let reachable = reachable_functions(summary, &config.entry_names);
    let reachable_kernels: Vec<String> = jit_kernels.iter().filter(|k| reachable.contains(*k)).cloned().collect();

    let mut flags = BTreeSet::new();
    if jit_kernels.is_empty() {
        flags.insert(LintFlag::NoJitKernel);
    } else if reachable_kernels.is_empty() {
        flags.insert(LintFlag::KernelUnreachable);
    }
    if !summary.duplicate_defs.is_empty() || summary.functions.iter().any(|f| f.dynamic_decorator) {
        flags.insert(LintFlag::DuplicateDef);
    }
    let entry_uses_module_calls = config.entry_names.iter().any(|e| e == ALL_TOP_LEVEL);
    let denied = |path: &String| {
        config
            .fallback_op_denylist
            .iter()
            .any(|prefix| path.starts_with(prefix.as_str()))
    };
    let fallback = summary
        .functions
        .iter()
        .filter(|f| reachable.contains(&f.name) && !is_jit_kernel(f))
        .flat_map(|f| f.call_paths.iter())
        .any(denied)
        || (entry_uses_module_calls && summary.top_level_call_paths.iter().any(denied));
    if fallback {
        flags.insert(LintFlag::FallbackOpsPresent);
    }

    let is_triton = match config.strictness {
        Strictness::Keyword => keyword_hit,
        Strictness::Decorator => !jit_kernels.is_empty(),
        Strictness::Reachable => !reachable_kernels.is_empty(),
    };
    LintVerdict {
        keyword_hit,
        jit_kernels,
        reachable_kernels,
        flags,
        is_triton,
    }
}

/// Lints `unit` at the configured strictness.
///
/// At `L0_KEYWORD` an unparseable source still gets a verdict, since the
/// keyword scan does not need a parse; no kernels are reported in that case.
pub fn lint(unit: &SourceUnit, config: &LintConfig) -> Result<LintVerdict, LintError> {
    if unit.is_blank() {
        return Err(LintError::EmptySource(unit.origin.clone()));
    }
    config.validate()?;
    let keyword_hit = keyword_check(unit);
    match parse_source(unit) {
        Ok(summary) => Ok(lint_summary(&summary, keyword_hit, config)),
        Err(e) if config.strictness == Strictness::Keyword => {
            log::debug!("{}: keyword-only verdict after parse failure: {e}", unit.origin);
            Ok(LintVerdict {
                keyword_hit,
                jit_kernels: Vec::new(),
                reachable_kernels: Vec::new(),
                flags: BTreeSet::from([LintFlag::NoJitKernel]),
                is_triton: keyword_hit,
            })
        }
        Err(e) => Err(e.into()),
    }
}
