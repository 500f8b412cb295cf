use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::SourceRecord;
use super::prompts;
use super::stages::TritonDraft;
use super::PipelineError;
use crate::exec::TestCase;

/// Records per interleaving slice; the OOD quota is `round(mix_ratio * SLICE)`.
pub const SLICE: usize = 10;
pub const DEFAULT_MIX_RATIO: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub instruction: String,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DistributionTag {
    Ood,
    InDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlRecord {
    pub instruction: String,
    pub reference: String,
    pub test_cases: Vec<TestCase>,
    pub tag: DistributionTag,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Datasets {
    pub sft: Vec<SftRecord>,
    pub rl: Vec<RlRecord>,
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

impl Datasets {
    pub fn sft_jsonl(&self) -> String {
        jsonl(&self.sft)
    }

    pub fn rl_jsonl(&self) -> String {
        jsonl(&self.rl)
    }
}

pub fn sft_response(draft: &TritonDraft) -> String {
    let code = draft.triton_source.raw_text.trim_end();
    if draft.cot.is_empty() {
        format!("```python\n{code}\n```")
    } else {
        format!("{}\n\n```python\n{code}\n```", draft.cot.trim_end())
    }
}

/// Orders `ood` and `in_dist` into slices of [`SLICE`] holding
/// `round(mix_ratio * SLICE)` OOD records where supply allows; a pool that
/// runs dry is backfilled from the other. Slices are shuffled internally.
pub fn interleave<T>(ood: Vec<T>, in_dist: Vec<T>, mix_ratio: f64, rng: &mut ChaCha8Rng) -> Vec<(DistributionTag, T)> {
    let quota = (mix_ratio * SLICE as f64).round() as usize;
    let mut ood: VecDeque<T> = ood.into();
    let mut ind: VecDeque<T> = in_dist.into();
    let mut out = Vec::with_capacity(ood.len() + ind.len());
    while !ood.is_empty() || !ind.is_empty() {
        let mut take_o = quota.min(ood.len());
        let take_i = (SLICE - quota).min(ind.len()) + (quota - take_o).min(ind.len().saturating_sub(SLICE - quota));
        take_o += (SLICE - take_o - take_i).min(ood.len() - take_o);
        let mut slice: Vec<(DistributionTag, T)> = Vec::with_capacity(SLICE);
        slice.extend(ood.drain(..take_o).map(|t| (DistributionTag::Ood, t)));
        slice.extend(ind.drain(..take_i).map(|t| (DistributionTag::InDist, t)));
        slice.shuffle(rng);
        out.extend(slice);
    }
    out
}

/// SFT lines for verified drafts (sorted by record and route) and RL lines
/// for validated records. Records with a verified draft are in-distribution.
pub fn emit_datasets(
    drafts: &[TritonDraft],
    records: &[SourceRecord],
    mix_ratio: f64,
    seed: u64,
) -> Result<Datasets, PipelineError> {
    if !(0.0..=1.0).contains(&mix_ratio) {
        return Err(PipelineError::Config(format!(
            "mix_ratio must be in [0, 1], got {mix_ratio}"
        )));
    }
    let mut records: Vec<&SourceRecord> = records.iter().collect();
    records.sort_by(|a, b| a.record_id.cmp(&b.record_id));

    let mut verified: Vec<&TritonDraft> = drafts.iter().filter(|d| d.verified).collect();
    verified.sort_by(|a, b| (&a.record_id, a.route).cmp(&(&b.record_id, b.route)));
    let mut sft = Vec::with_capacity(verified.len());
    for d in &verified {
        let record = records
            .binary_search_by(|r| r.record_id.as_str().cmp(&d.record_id))
            .map(|i| records[i])
            .map_err(|_| PipelineError::Config(format!("draft for unknown record {}", d.record_id)))?;
        sft.push(SftRecord {
            instruction: prompts::instruction(record),
            response: sft_response(d),
        });
    }

    let covered: BTreeSet<&str> = verified.iter().map(|d| d.record_id.as_str()).collect();
    let (mut in_dist, mut ood): (Vec<&SourceRecord>, Vec<&SourceRecord>) = records
        .into_iter()
        .filter(|r| r.validated)
        .partition(|r| covered.contains(r.record_id.as_str()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ood.shuffle(&mut rng);
    in_dist.shuffle(&mut rng);
    let rl = interleave(ood, in_dist, mix_ratio, &mut rng)
        .into_iter()
        .map(|(tag, r)| RlRecord {
            instruction: prompts::instruction(r),
            reference: r.host_source.raw_text.clone(),
            test_cases: r.test_cases.clone(),
            tag,
        })
        .collect();
    Ok(Datasets { sft, rl })
}
