//! Benchmark scoring: accuracy ladder, `fast_p`, best-of-k selection and
//! speedup percentiles, plus JSON and Markdown reports.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{Channel, ExecStatus, ExecVerdict};
use crate::lint::LintVerdict;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("task {task_id} has {have} attempts, fewer than k = {k}")]
    NotEnoughAttempts { task_id: String, have: usize, k: usize },
    #[error("task {0} has no attempts")]
    NoAttempts(String),
    #[error("no tasks to score{0}")]
    EmptyChannel(String),
    #[error("k must be positive")]
    ZeroK,
    #[error("quantile {0} is outside (0, 1)")]
    BadQuantile(f64),
    #[error("p = {0} must be a non-negative number")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub candidate_id: String,
    pub exec: ExecVerdict,
    pub lint: LintVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub channel: Channel,
    pub attempts: Vec<Attempt>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Count a PASS as correct even when the lint rejects the source.
    #[serde(default)]
    pub exec_only: bool,
    /// Leave incorrect tasks out of percentile distributions instead of scoring them 0.
    #[serde(default)]
    pub exclude_incorrect: bool,
}

impl Attempt {
    pub fn is_correct(&self, opts: &ScoreOptions) -> bool {
        self.exec.status == ExecStatus::Pass && (opts.exec_only || self.lint.is_triton)
    }

    /// Speedup of a correct attempt, `0` otherwise or when untimed.
    fn effective_speedup(&self, opts: &ScoreOptions) -> f64 {
        if self.is_correct(opts) {
            self.exec.speedup.filter(|s| s.is_finite()).unwrap_or(0.0)
        } else {
            0.0
        }
    }
}

fn rank(a: &Attempt, b: &Attempt, opts: &ScoreOptions) -> Ordering {
    // Greater means better.
    let (ca, cb) = (a.is_correct(opts), b.is_correct(opts));
    let primary = match (ca, cb) {
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (true, true) => a.effective_speedup(opts).total_cmp(&b.effective_speedup(opts)),
        (false, false) => a.exec.status.cmp(&b.exec.status),
    };
    primary.then_with(|| b.candidate_id.cmp(&a.candidate_id))
}

/// Best attempt among the first `k`.
pub fn pass_at_k<'a>(result: &'a TaskResult, k: usize, opts: &ScoreOptions) -> Result<&'a Attempt, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let window = &result.attempts[..k.min(result.attempts.len())];
    window
        .iter()
        .max_by(|a, b| rank(a, b, opts))
        .ok_or_else(|| MetricsError::NoAttempts(result.task_id.clone()))
}

fn best_of_k<'a>(results: &'a [TaskResult], k: usize, opts: &ScoreOptions) -> Result<Vec<&'a Attempt>, MetricsError> {
    results
        .iter()
        .map(|r| {
            if k > 1 && r.attempts.len() < k {
                return Err(MetricsError::NotEnoughAttempts {
                    task_id: r.task_id.clone(),
                    have: r.attempts.len(),
                    k,
                });
            }
            pass_at_k(r, k, opts)
        })
        .collect()
}

/// Fraction of tasks whose best-of-k attempt is correct and faster than `p`.
pub fn fast_p(results: &[TaskResult], p: f64, k: usize, opts: &ScoreOptions) -> Result<f64, MetricsError> {
    if p.is_nan() || p < 0.0 {
        return Err(MetricsError::BadThreshold(p));
    }
    if results.is_empty() {
        return Err(MetricsError::EmptyChannel(String::new()));
    }
    let best = best_of_k(results, k, opts)?;
    let hits = best
        .iter()
        .filter(|a| a.is_correct(opts) && a.effective_speedup(opts) > p)
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// Linear interpolation between order statistics at rank `q·(n-1)`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn percentile_speedup(results: &[TaskResult], q: f64, k: usize, opts: &ScoreOptions) -> Result<f64, MetricsError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(MetricsError::BadQuantile(q));
    }
    if results.is_empty() {
        return Err(MetricsError::EmptyChannel(String::new()));
    }
    let best = best_of_k(results, k, opts)?;
    let speedups: Vec<f64> = best
        .iter()
        .filter(|a| !opts.exclude_incorrect || a.is_correct(opts))
        .map(|a| a.effective_speedup(opts))
        .collect();
    Ok(quantile(&speedups, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub compile_acc: f64,
    pub call_acc: f64,
    pub exec_acc: f64,
}

pub fn channel_accuracies(results: &[TaskResult], k: usize, opts: &ScoreOptions) -> Result<Accuracies, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyChannel(String::new()));
    }
    let best = best_of_k(results, k, opts)?;
    let n = results.len() as f64;
    let count = |f: &dyn Fn(&Attempt) -> bool| best.iter().filter(|a| f(a)).count() as f64 / n;
    Ok(Accuracies {
        compile_acc: count(&|a| a.exec.status != ExecStatus::CompileError),
        call_acc: count(&|a| a.exec.status > ExecStatus::CallError),
        exec_acc: count(&|a| a.is_correct(opts)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub ps: Vec<f64>,
    pub k: usize,
    pub quantiles: Vec<f64>,
    #[serde(default)]
    pub options: ScoreOptions,
}

impl Default for ScoreRequest {
    fn default() -> Self {
        Self {
            ps: vec![1.0, 2.0],
            k: 1,
            quantiles: vec![0.75, 0.5],
            options: ScoreOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastP {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Percentile {
    pub q: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: Channel,
    pub n: usize,
    #[serde(flatten)]
    pub accuracies: Accuracies,
    pub fast_p: Vec<FastP>,
    pub percentiles: Vec<Percentile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub k: usize,
    pub options: ScoreOptions,
    pub channels: Vec<ChannelReport>,
}

/// Scores every channel present in `results`, in channel order.
pub fn score(results: &[TaskResult], request: &ScoreRequest) -> Result<BenchmarkReport, MetricsError> {
    if request.k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if results.is_empty() {
        return Err(MetricsError::EmptyChannel(String::new()));
    }
    let mut by_channel: BTreeMap<Channel, Vec<TaskResult>> = BTreeMap::new();
    for r in results {
        by_channel.entry(r.channel).or_default().push(r.clone());
    }
    let opts = &request.options;
    let mut channels = Vec::new();
    for (channel, rs) in by_channel {
        let tag = |e: MetricsError| match e {
            MetricsError::EmptyChannel(_) => MetricsError::EmptyChannel(format!(" in {channel}")),
            other => other,
        };
        let accuracies = channel_accuracies(&rs, request.k, opts).map_err(tag)?;
        let fast = request
            .ps
            .iter()
            .map(|&p| fast_p(&rs, p, request.k, opts).map(|value| FastP { p, value }))
            .collect::<Result<_, _>>()?;
        let percentiles = request
            .quantiles
            .iter()
            .map(|&q| percentile_speedup(&rs, q, request.k, opts).map(|speedup| Percentile { q, speedup }))
            .collect::<Result<_, _>>()?;
        channels.push(ChannelReport {
            channel,
            n: rs.len(),
            accuracies,
            fast_p: fast,
            percentiles,
        });
    }
    Ok(BenchmarkReport {
        schema_version: REPORT_SCHEMA_VERSION,
        k: request.k,
        options: *opts,
        channels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
}

fn fmt_num(x: f64) -> String {
    // Keeps "1" and "0.5" short in column names.
    let s = format!("{x}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

pub fn render_report(report: &BenchmarkReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("reports always serialize") + "\n",
        ReportFormat::Markdown => render_markdown(report),
    }
}

fn render_markdown(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    for (i, ch) in report.channels.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "### {} (N = {}, pass@{})\n", ch.channel, ch.n, report.k);
        let mut head = vec!["Comp".to_string(), "Call / Exec".to_string()];
        let mut cells = vec![
            pct(ch.accuracies.compile_acc),
            format!("{} / {}", pct(ch.accuracies.call_acc), pct(ch.accuracies.exec_acc)),
        ];
        if !ch.fast_p.is_empty() {
            head.push(
                ch.fast_p
                    .iter()
                    .map(|f| format!("fast_{}", fmt_num(f.p)))
                    .collect::<Vec<_>>()
                    .join(" / "),
            );
            cells.push(ch.fast_p.iter().map(|f| pct(f.value)).collect::<Vec<_>>().join(" / "));
        }
        if !ch.percentiles.is_empty() {
            head.push(
                ch.percentiles
                    .iter()
                    .map(|p| format!("P{}", fmt_num(p.q * 100.0)))
                    .collect::<Vec<_>>()
                    .join(" / "),
            );
            cells.push(
                ch.percentiles
                    .iter()
                    .map(|p| format!("{:.2}", p.speedup))
                    .collect::<Vec<_>>()
                    .join(" / "),
            );
        }
        let _ = writeln!(out, "| {} |", head.join(" | "));
        let _ = writeln!(out, "|{}", " --- |".repeat(head.len()));
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}
