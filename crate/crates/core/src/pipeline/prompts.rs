//! Prompt templates shipped as text files under `prompts/`.
//!
//! Placeholders are `{name}`; anything else in braces is left alone.

use super::llm::Message;
use super::manifest::SourceRecord;

pub const SYSTEM: &str = include_str!("../../prompts/system.txt");
pub const INSTRUCTION: &str = include_str!("../../prompts/instruction.txt");
pub const TEST_CASES: &str = include_str!("../../prompts/test_cases.txt");
pub const DISTILL: &str = include_str!("../../prompts/distill.txt");
pub const REFINE: &str = include_str!("../../prompts/refine.txt");
pub const NARRATE: &str = include_str!("../../prompts/narrate.txt");

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn chat(user: String) -> Vec<Message> {
    vec![Message::system(SYSTEM.trim_end()), Message::user(user.trim_end())]
}

/// Task statement shown to the model, shared by the SFT and RL datasets.
pub fn instruction(record: &SourceRecord) -> String {
    render(
        INSTRUCTION,
        &[
            ("entry", &record.entry),
            ("source", record.host_source.raw_text.trim_end()),
        ],
    )
    .trim_end()
    .to_string()
}

pub fn test_cases(record: &SourceRecord, count: usize) -> Vec<Message> {
    chat(render(
        TEST_CASES,
        &[
            ("entry", &record.entry),
            ("source", record.host_source.raw_text.trim_end()),
            ("count", &count.to_string()),
        ],
    ))
}

pub fn distill(record: &SourceRecord) -> Vec<Message> {
    chat(render(DISTILL, &[("instruction", &instruction(record))]))
}

pub fn refine(record: &SourceRecord, capture: &str) -> Vec<Message> {
    chat(render(
        REFINE,
        &[
            ("entry", &record.entry),
            ("source", record.host_source.raw_text.trim_end()),
            ("capture", capture.trim_end()),
        ],
    ))
}

pub fn narrate(record: &SourceRecord, code: &str) -> Vec<Message> {
    chat(render(
        NARRATE,
        &[("instruction", &instruction(record)), ("code", code.trim_end())],
    ))
}
