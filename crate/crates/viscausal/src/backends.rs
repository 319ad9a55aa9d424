//! Backend selection from a JSON config file.
//!
//! ```json
//! {"kind": "scripted", "script": "script.jsonl"}
//! {"kind": "http", "endpoint": "http://localhost:8000/v1/chat/completions", "model": "m"}
//! ```
//!
//! A relative script path resolves against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use viscausal_core::backend::{Backend, BackendError, ChatRequest, ChatResponse};

use crate::http::{HttpBackend, HttpConfig};
use crate::scripted::ScriptedBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Scripted { script: PathBuf },
    Http(HttpConfig),
}

pub enum AnyBackend {
    Scripted(ScriptedBackend),
    Http(Box<HttpBackend>),
}

impl AnyBackend {
    pub fn from_config(config: &BackendConfig, base_dir: &Path) -> anyhow::Result<Self> {
        Ok(match config {
            BackendConfig::Scripted { script } => AnyBackend::Scripted(ScriptedBackend::load(base_dir.join(script))?),
            BackendConfig::Http(c) => AnyBackend::Http(Box::new(HttpBackend::new(c.clone())?)),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read backend config {}: {e}", path.display()))?;
        let config: BackendConfig = serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("invalid backend config {}: {e}", path.display()))?;
        Self::from_config(&config, path.parent().unwrap_or(Path::new(".")))
    }
}

impl Backend for AnyBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        match self {
            AnyBackend::Scripted(b) => b.complete(request),
            AnyBackend::Http(b) => b.complete(request),
        }
    }

    fn sample(&self, request: &ChatRequest, n: usize) -> Vec<Result<ChatResponse, BackendError>> {
        match self {
            AnyBackend::Scripted(b) => b.sample(request, n),
            AnyBackend::Http(b) => b.sample(request, n),
        }
    }
}
