use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CREDENTIAL_ENV: &str = "KERNEL_JUDGE_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("LLM unavailable: {0}")]
    Unavailable(String),
    #[error("no canned completion for prompt {0}")]
    NoCompletion(String),
}

pub trait LlmClient: Sync {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError>;
}

impl<T: LlmClient + ?Sized> LlmClient for &T {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        (**self).complete(messages)
    }
}

/// sha256 of the JSON-serialized message list.
pub fn prompt_hash(messages: &[Message]) -> String {
    crate::util::sha256_hex(serde_json::to_string(messages).expect("messages serialize").as_bytes())
}

/// One canned prompt. Repeated requests walk through `completions`; the
/// last one repeats once they run out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    pub completions: Vec<String>,
}

/// Offline client replaying completions keyed by [`prompt_hash`].
#[derive(Debug, Default)]
pub struct MockLlm {
    entries: HashMap<String, Vec<String>>,
    served: Mutex<HashMap<String, usize>>,
}

impl MockLlm {
    pub fn new(entries: impl IntoIterator<Item = MockEntry>) -> Self {
        Self {
            entries: entries.into_iter().map(|e| (e.prompt_hash, e.completions)).collect(),
            served: Mutex::new(HashMap::new()),
        }
    }

    /// Loads a JSON array of [`MockEntry`].
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| LlmError::Unavailable(format!("{}: {e}", path.display())))?;
        let entries: Vec<MockEntry> =
            serde_json::from_str(&text).map_err(|e| LlmError::Unavailable(format!("{}: {e}", path.display())))?;
        Ok(Self::new(entries))
    }

    pub fn insert(&mut self, messages: &[Message], completions: Vec<String>) {
        self.entries.insert(prompt_hash(messages), completions);
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let hash = prompt_hash(messages);
        let completions = self
            .entries
            .get(&hash)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| LlmError::NoCompletion(hash.clone()))?;
        let mut served = self.served.lock().expect("mock counter poisoned");
        let n = served.entry(hash).or_insert(0);
        let reply = completions[(*n).min(completions.len() - 1)].clone();
        *n += 1;
        Ok(reply)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpLlmConfig {
    /// Base URL of an OpenAI-style API, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout() -> f64 {
    300.0
}

fn default_retries() -> u32 {
    2
}

/// Chat-completions client over HTTP. The bearer credential is read from
/// [`CREDENTIAL_ENV`] at construction.
pub struct HttpLlm {
    config: HttpLlmConfig,
    agent: ureq::Agent,
    key: Option<String>,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

impl HttpLlm {
    pub fn new(config: HttpLlmConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s.max(1.0))))
            .build()
            .into();
        let key = std::env::var(CREDENTIAL_ENV).ok().filter(|k| !k.is_empty());
        Self { config, agent, key }
    }

    fn once(&self, messages: &[Message]) -> Result<String, String> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = ChatRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
        };
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| "response has no choices".to_string())
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 << attempt.min(6)));
            }
            match self.once(messages) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("LLM request attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(LlmError::Unavailable(last))
    }
}
