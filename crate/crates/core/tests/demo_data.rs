//! Keeps `demo/llm_mock.json` and `demo/worker_transcripts.json` in sync with
//! the hand-written files under `demo/responses`. Prompt hashes change when
//! templates or sources change; rerun with `TRITONJUDGE_REGENERATE_DEMO=1`
//! to rewrite both files.

mod common;

use std::fs;

use tritonjudge_core::exec::{JobInput, JobMode, JudgeOptions, TranscriptEntry, WorkerJob, WorkerReply};
use tritonjudge_core::pipeline::{extract_code, gen_test_cases, prompts, CaseGenOptions, MockEntry, MockLlm};

fn build() -> (Vec<MockEntry>, Vec<TranscriptEntry>) {
    let responses = common::demo_dir().join("responses");
    let mut mock = Vec::new();
    let mut transcripts = Vec::new();
    for record in common::demo_records() {
        let name = common::response_name(&record);
        let dir = responses.join(&name);
        assert!(dir.is_dir(), "missing responses for {name}");
        let read = |f: &str| fs::read_to_string(dir.join(f)).ok();

        let mut case_files: Vec<_> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|f| f.starts_with("cases."))
            .collect();
        case_files.sort();
        let cases_entry = MockEntry {
            prompt_hash: tritonjudge_core::pipeline::prompt_hash(&prompts::test_cases(
                &record,
                CaseGenOptions::default().cases,
            )),
            label: format!("{name}/cases"),
            completions: case_files.iter().map(|f| read(f).unwrap()).collect(),
        };
        let cases = gen_test_cases(
            &record,
            &MockLlm::new([cases_entry.clone()]),
            &CaseGenOptions::default(),
        )
        .expect("demo cases parse")
        .cases;
        mock.push(cases_entry);

        if let Some(text) = read("distill.md") {
            mock.push(MockEntry {
                prompt_hash: tritonjudge_core::pipeline::prompt_hash(&prompts::distill(&record)),
                label: format!("{name}/distill"),
                completions: vec![text],
            });
        }
        if let Some(capture) = read("capture.py") {
            let request = WorkerJob::new(
                format!("{}-capture", record.record_id),
                JobMode::CompileCapture,
                &record.host_source.raw_text,
                &record.entry,
                JobInput::from_case(&cases[0]),
                JudgeOptions::default().compile_timeout_s,
            );
            let mut reply = WorkerReply::success(&request.job_id, vec![]);
            reply.capture = Some(capture.clone());
            transcripts.push(TranscriptEntry { request, reply });

            let refined = read("refine.md").expect("capture needs refine.md");
            let (_, code) = extract_code(&refined).expect("refine.md has code");
            mock.push(MockEntry {
                prompt_hash: tritonjudge_core::pipeline::prompt_hash(&prompts::refine(&record, &capture)),
                label: format!("{name}/refine"),
                completions: vec![refined],
            });
            mock.push(MockEntry {
                prompt_hash: tritonjudge_core::pipeline::prompt_hash(&prompts::narrate(&record, &code)),
                label: format!("{name}/narrate"),
                completions: vec![read("narrate.md").expect("capture needs narrate.md")],
            });
        }
    }
    mock.sort_by(|a, b| a.label.cmp(&b.label));
    (mock, transcripts)
}

#[test]
fn demo_mock_files_are_current() {
    let (mock, transcripts) = build();
    let mock_json = serde_json::to_string_pretty(&mock).unwrap() + "\n";
    let transcripts_json = serde_json::to_string_pretty(&transcripts).unwrap() + "\n";
    let dir = common::demo_dir();
    let targets = [
        ("llm_mock.json", mock_json),
        ("worker_transcripts.json", transcripts_json),
    ];
    if std::env::var_os("TRITONJUDGE_REGENERATE_DEMO").is_some() {
        for (file, text) in &targets {
            fs::write(dir.join(file), text).unwrap();
        }
    }
    for (file, text) in &targets {
        let on_disk = fs::read_to_string(dir.join(file)).unwrap_or_default();
        assert!(
            &on_disk == text,
            "demo/{file} is stale; rerun with TRITONJUDGE_REGENERATE_DEMO=1"
        );
    }
}
