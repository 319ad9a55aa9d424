//! Line-delimited conversation records built from search trajectories.
//!
//! Each record carries the image reference and one turn per reasoning step
//! in loop order; `trajectory` is the model outputs joined by newlines.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use viscausal_core::search::{Action, Trajectory};

use crate::dataset::DatasetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// `None` for single-call prompts outside the action loop.
    pub action: Option<Action>,
    pub system: String,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub img_id: u64,
    pub image: Option<String>,
    pub conversations: Vec<Turn>,
    pub trajectory: String,
    pub value: f64,
}

impl SftRecord {
    pub fn from_trajectory(img_id: u64, image: Option<String>, t: &Trajectory) -> Self {
        Self {
            img_id,
            image,
            conversations: t
                .steps
                .iter()
                .map(|s| Turn {
                    action: s.action,
                    system: s.system_text.clone(),
                    prompt: s.user_text.clone(),
                    response: s.model_text.clone(),
                })
                .collect(),
            trajectory: t.concatenated(),
            value: t.value,
        }
    }
}

/// Write `records` one per line; returns the count written.
pub fn export_sft(path: impl AsRef<Path>, records: &[SftRecord]) -> Result<usize, DatasetError> {
    let path = path.as_ref();
    let wrap = |source| DatasetError::UnwritablePath { path: path.display().to_string(), source };
    let mut out = BufWriter::new(fs::File::create(path).map_err(wrap)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| wrap(e.into()))?;
        out.write_all(b"\n").map_err(wrap)?;
    }
    out.flush().map_err(wrap)?;
    Ok(records.len())
}

pub fn read_sft(path: impl AsRef<Path>) -> anyhow::Result<Vec<SftRecord>> {
    let file = fs::File::open(path.as_ref())?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| anyhow::anyhow!("line {}: {e}", i + 1))?);
        }
    }
    Ok(out)
}
