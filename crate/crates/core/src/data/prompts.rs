// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt files: one JSON object per line, `{"text": ..., "scores": {...}}`.
//! An optional `"category"` field carries the planted category of
//! synthetic prompts.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::labels::ClassLabel;
use crate::error::{FormatError, Result};
use crate::eval::CategoryScores;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub text: String,
    pub scores: CategoryScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<ClassLabel>,
}

pub fn parse_prompts(text: &str) -> Result<Vec<PromptRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PromptRecord = serde_json::from_str(line).map_err(|e| FormatError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_prompts(path: impl AsRef<Path>) -> Result<Vec<PromptRecord>> {
    parse_prompts(&fs::read_to_string(path)?)
}

pub fn write_prompts(path: impl AsRef<Path>, prompts: &[PromptRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for p in prompts {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
