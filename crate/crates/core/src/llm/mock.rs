use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, LlmError, LlmProvider, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMatcher {
    /// Exact [`ChatRequest::fingerprint`].
    Fingerprint(String),
    /// Substring of either prompt.
    Contains(String),
}

impl ScriptMatcher {
    fn matches(&self, request: &ChatRequest) -> bool {
        match self {
            ScriptMatcher::Fingerprint(f) => *f == request.fingerprint(),
            ScriptMatcher::Contains(s) => {
                request.system_prompt.contains(s.as_str())
                    || request.user_prompt.contains(s.as_str())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptReply {
    Text(String),
    TransportError(String),
    AuthError(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub when: Option<ScriptMatcher>,
    pub reply: ScriptReply,
}

impl ScriptEntry {
    pub fn text(text: impl Into<String>) -> Self {
        Self::reply(ScriptReply::Text(text.into()))
    }

    pub fn reply(reply: ScriptReply) -> Self {
        Self { when: None, reply }
    }

    pub fn when(mut self, matcher: ScriptMatcher) -> Self {
        self.when = Some(matcher);
        self
    }
}

/// One line of `mock_script.jsonl`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    error: Option<String>,
    #[serde(default, rename = "match")]
    when: Option<ScriptMatcher>,
}

/// Replays scripted replies in FIFO order.
///
/// A request takes the earliest entry whose matcher accepts it; entries
/// without a matcher accept every request. Every request is recorded so
/// tests can inspect exactly what was sent.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    queue: Mutex<VecDeque<ScriptEntry>>,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            queue: Mutex::new(entries.into()),
            seen: Mutex::default(),
        }
    }

    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(texts.into_iter().map(ScriptEntry::text).collect())
    }

    /// Parses `mock_script.jsonl`: one object per line with either
    /// `"response"` or `"error"` (`"transport"` or `"auth"`), and an
    /// optional `"match"` of `{"fingerprint": ..}` or `{"contains": ..}`.
    pub fn from_jsonl(text: &str) -> Result<Self, LlmError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(line)
                .map_err(|e| LlmError::Config(format!("mock script line {}: {e}", i + 1)))?;
            let reply = match (parsed.response, parsed.error.as_deref()) {
                (Some(text), None) => ScriptReply::Text(text),
                (None, Some("transport")) => ScriptReply::TransportError("scripted".into()),
                (None, Some("auth")) => ScriptReply::AuthError("scripted".into()),
                _ => return Err(LlmError::Config(format!(
                    "mock script line {}: need exactly one of response or error (transport|auth)",
                    i + 1
                ))),
            };
            entries.push(ScriptEntry {
                when: parsed.when,
                reply,
            });
        }
        Ok(Self::new(entries))
    }

    pub fn from_jsonl_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn push(&self, entry: ScriptEntry) {
        self.queue.lock().unwrap().push_back(entry);
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

#[async_trait]
impl LlmProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "mock"
    }

    async fn call(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.seen.lock().unwrap().push(request.clone());
        let entry = {
            let mut queue = self.queue.lock().unwrap();
            let pos = queue
                .iter()
                .position(|e| e.when.as_ref().is_none_or(|m| m.matches(request)));
            pos.and_then(|p| queue.remove(p))
        };
        match entry.map(|e| e.reply) {
            None => Err(LlmError::ScriptExhausted),
            Some(ScriptReply::TransportError(m)) => Err(LlmError::Transport(m)),
            Some(ScriptReply::AuthError(m)) => Err(LlmError::Auth(m)),
            Some(ScriptReply::Text(text)) => Ok(ChatResponse {
                usage: Usage {
                    prompt_tokens: word_count(&request.system_prompt)
                        + word_count(&request.user_prompt),
                    completion_tokens: word_count(&text),
                },
                text,
                latency: Duration::ZERO,
            }),
        }
    }
}
