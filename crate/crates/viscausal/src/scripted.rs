//! Replay backend driven by a line-delimited script.
//!
//! Each line is `{"match": {...}, "response": "..."}`. Matcher fields are all
//! optional and must all hold:
//!
//! - `action`: `region_selection`, `entity_recognition`,
//!   `causality_orientation`, or `"none"` for single-call prompts;
//! - `contains`: a substring of the system or user text;
//! - `prompt_hash`: [`prompt_hash`] of the request;
//! - `sample_index`: the request's sample index.
//!
//! Records with an explicit `sample_index` answer only that index. The other
//! matching records form an ordered list, and the request with sample index
//! `k` receives its `k`-th entry. Past the end the backend reports
//! [`BackendError::ScriptExhausted`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use viscausal_core::backend::{Backend, BackendError, ChatRequest, ChatResponse};
use viscausal_core::search::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMatch {
    RegionSelection,
    EntityRecognition,
    CausalityOrientation,
    /// Requests outside the action loop, such as the one-step baseline.
    None,
}

impl ActionMatch {
    fn accepts(self, action: Option<Action>) -> bool {
        matches!(
            (self, action),
            (ActionMatch::None, None)
                | (ActionMatch::RegionSelection, Some(Action::RegionSelection))
                | (ActionMatch::EntityRecognition, Some(Action::EntityRecognition))
                | (ActionMatch::CausalityOrientation, Some(Action::CausalityOrientation))
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matcher {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionMatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
}

impl Matcher {
    fn accepts_prompt(&self, request: &ChatRequest, hash: &str) -> bool {
        self.action.is_none_or(|a| a.accepts(request.action))
            && self
                .contains
                .as_deref()
                .is_none_or(|s| request.user_text.contains(s) || request.system_text.contains(s))
            && self.prompt_hash.as_deref().is_none_or(|h| h.eq_ignore_ascii_case(hash))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRecord {
    #[serde(rename = "match", default)]
    pub matcher: Matcher,
    pub response: String,
}

/// SHA-256 hex of the system text, a NUL byte, and the user text.
pub fn prompt_hash(system_text: &str, user_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(system_text.as_bytes());
    h.update([0u8]);
    h.update(user_text.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Unreadable { path: String, source: std::io::Error },
    #[error("script line {line}: {message}")]
    Invalid { line: usize, message: String },
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    records: Vec<ScriptRecord>,
}

impl ScriptedBackend {
    pub fn new(records: Vec<ScriptRecord>) -> Self {
        Self { records }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ScriptError::Unreadable { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(line).map_err(|e| ScriptError::Invalid { line: i + 1, message: e.to_string() })?;
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ScriptRecord] {
        &self.records
    }

    fn lookup(&self, request: &ChatRequest) -> Option<&ScriptRecord> {
        let hash = prompt_hash(&request.system_text, &request.user_text);
        let index = request.decode.sample_index;
        let mut candidates = self.records.iter().filter(|r| r.matcher.accepts_prompt(request, &hash));
        let explicit = candidates.clone().find(|r| r.matcher.sample_index == Some(index));
        explicit.or_else(|| candidates.by_ref().filter(|r| r.matcher.sample_index.is_none()).nth(index as usize))
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        self.lookup(request).map(|r| ChatResponse::text(r.response.clone())).ok_or(BackendError::ScriptExhausted)
    }
}
