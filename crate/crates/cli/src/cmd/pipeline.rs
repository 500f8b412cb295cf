use std::path::PathBuf;

use anyhow::{anyhow, Context};
use serde::Serialize;
use tritonjudge_core::exec::JudgeError;
use tritonjudge_core::pipeline::{
    ingest, run_pipeline, DistributionTag, HttpLlm, HttpLlmConfig, LlmClient, MockLlm, PipelineConfig, PipelineError,
    PipelineRun, Route, CREDENTIAL_ENV, DEFAULT_MIX_RATIO,
};

use crate::backend::{judge_options, BackendArgs, BackendFactory};
use crate::io::{input_err, CmdResult, Failure, ResultExt};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON array of manifest entries
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Recorded completions keyed by prompt hash; runs fully offline
    #[arg(long, conflicts_with_all = ["llm_url", "llm_model"])]
    pub mock_llm: Option<PathBuf>,
    /// Base URL of an OpenAI-style chat completions API
    #[arg(long, requires = "llm_model")]
    pub llm_url: Option<String>,
    #[arg(long, requires = "llm_url")]
    pub llm_model: Option<String>,
    #[arg(long, default_value_t = DEFAULT_MIX_RATIO)]
    pub mix_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test cases requested per record
    #[arg(long, default_value_t = 3)]
    pub cases: usize,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Serialize)]
struct RouteCounts {
    distill: usize,
    compile_refine: usize,
}

#[derive(Debug, Serialize)]
struct Summary {
    ingested: usize,
    with_test_cases: usize,
    validated: usize,
    drafts: RouteCounts,
    verified: RouteCounts,
    sft_lines: usize,
    rl_lines: usize,
    rl_ood: usize,
    rl_in_dist: usize,
}

fn summarize(run: &PipelineRun) -> Summary {
    let count = |route: Route, verified_only: bool| {
        run.drafts
            .iter()
            .filter(|d| d.route == route && (d.verified || !verified_only))
            .count()
    };
    let ood = run.datasets.rl.iter().filter(|r| r.tag == DistributionTag::Ood).count();
    Summary {
        ingested: run.records.len(),
        with_test_cases: run.records.iter().filter(|r| !r.test_cases.is_empty()).count(),
        validated: run.records.iter().filter(|r| r.validated).count(),
        drafts: RouteCounts {
            distill: count(Route::Distill, false),
            compile_refine: count(Route::CompileRefine, false),
        },
        verified: RouteCounts {
            distill: count(Route::Distill, true),
            compile_refine: count(Route::CompileRefine, true),
        },
        sft_lines: run.datasets.sft.len(),
        rl_lines: run.datasets.rl.len(),
        rl_ood: ood,
        rl_in_dist: run.datasets.rl.len() - ood,
    }
}

fn classify(e: PipelineError) -> Failure {
    match e {
        PipelineError::Llm(_)
        | PipelineError::Backend(_)
        | PipelineError::Judge(JudgeError::BackendUnavailable(_) | JudgeError::Protocol(_)) => Failure::Infra(e.into()),
        _ => Failure::Input(e.into()),
    }
}

fn client(args: &Args) -> Result<Box<dyn LlmClient>, Failure> {
    if let Some(path) = &args.mock_llm {
        let mock = MockLlm::load(path).map_err(|e| Failure::Input(e.into()))?;
        return Ok(Box::new(mock));
    }
    match (&args.llm_url, &args.llm_model) {
        (Some(url), Some(model)) => Ok(Box::new(HttpLlm::new(HttpLlmConfig {
            base_url: url.clone(),
            model: model.clone(),
            temperature: 0.0,
            timeout_s: 300.0,
            retries: 2,
        }))),
        _ => Err(input_err(format!(
            "no LLM configured: pass --mock-llm FILE to replay recorded completions offline, \
             or --llm-url URL --llm-model NAME with the API key in {CREDENTIAL_ENV}"
        ))),
    }
}

pub fn run(args: Args) -> CmdResult {
    let llm = client(&args)?;
    let records = ingest(&args.manifest).map_err(classify)?;
    let factory = BackendFactory::from_args(&args.backend)?;
    let mut config = PipelineConfig {
        mix_ratio: args.mix_ratio,
        seed: args.seed,
        judge: judge_options(&args.backend),
        parallelism: args.backend.parallelism,
        ..PipelineConfig::default()
    };
    config.cases.cases = args.cases;

    let run = run_pipeline(records, llm.as_ref(), || factory.make(), &config).map_err(classify)?;

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))
        .input()?;
    let write = |name: &str, body: String| -> CmdResult {
        let path = args.out_dir.join(name);
        std::fs::write(&path, body)
            .map_err(|e| anyhow!("writing {}: {e}", path.display()))
            .input()
    };
    write("sft.jsonl", run.datasets.sft_jsonl())?;
    write("rl.jsonl", run.datasets.rl_jsonl())?;
    let drafts: String = run
        .drafts
        .iter()
        .map(|d| serde_json::to_string(d).expect("drafts serialize") + "\n")
        .collect();
    write("drafts.jsonl", drafts)?;
    let summary = serde_json::to_string_pretty(&summarize(&run)).input()? + "\n";
    write("summary.json", summary.clone())?;
    print!("{summary}");
    Ok(())
}
