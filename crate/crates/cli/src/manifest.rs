// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run manifests and replay.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::args::Command;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written next to a command's outputs. `config` holds the fully resolved
/// command, so replay needs nothing else.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Command,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    /// Output file names relative to `out_dir`, sorted.
    pub outputs: Vec<String>,
    pub version: String,
    pub duration_secs: f64,
}

impl Manifest {
    pub fn write(&self) -> CliResult<PathBuf> {
        let path = self.out_dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::usage(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Relative paths of every regular file under `dir` except the manifest.
pub fn list_outputs(dir: &Path) -> CliResult<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root");
                if rel != Path::new(MANIFEST_FILE) {
                    out.push(rel.to_string_lossy().replace('\\', "/"));
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// Files of `expected` that are missing or differ under `actual_dir`, plus
/// files that exist only there.
pub fn compare_outputs(
    expected_dir: &Path,
    expected: &[String],
    actual_dir: &Path,
) -> CliResult<Vec<String>> {
    let actual = list_outputs(actual_dir)?;
    let mut bad = Vec::new();
    for name in expected {
        let a = fs::read(expected_dir.join(name))?;
        match fs::read(actual_dir.join(name)) {
            Ok(b) if a == b => {}
            _ => bad.push(name.clone()),
        }
    }
    bad.extend(actual.into_iter().filter(|n| !expected.contains(n)));
    Ok(bad)
}
