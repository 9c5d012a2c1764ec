// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reader for the Jigsaw toxic comment CSV
//! (`id,comment_text,toxic,severe_toxic,obscene,threat,insult,identity_hate`).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::labels::{derive_category_label, ClassLabel, ToxicityFlags};
use crate::error::{Error, FormatError, Result};

pub const JIGSAW_COLUMNS: [&str; 8] = [
    "id",
    "comment_text",
    "toxic",
    "severe_toxic",
    "obscene",
    "threat",
    "insult",
    "identity_hate",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledComment {
    pub id: String,
    pub text: String,
    pub flags: ToxicityFlags,
    pub derived_label: ClassLabel,
}

pub fn load_jigsaw(path: impl AsRef<Path>) -> Result<Vec<LabeledComment>> {
    let file = std::fs::File::open(path)?;
    read_jigsaw(file)
}

/// Parses Jigsaw CSV from any reader. Quoted fields may contain newlines.
/// Row numbers in errors count data rows from 1.
pub fn read_jigsaw<R: Read>(reader: R) -> Result<Vec<LabeledComment>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| FormatError::Csv {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let mut col = [0usize; 8];
    for (slot, name) in col.iter_mut().zip(JIGSAW_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| FormatError::MissingColumn(name.to_string()))?;
    }

    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| FormatError::Csv {
            row,
            message: e.to_string(),
        })?;
        let field = |k: usize| -> Result<&str> {
            record.get(col[k]).ok_or_else(|| {
                Error::Format(FormatError::Csv {
                    row,
                    message: format!("missing field `{}`", JIGSAW_COLUMNS[k]),
                })
            })
        };
        let flag = |k: usize| -> Result<bool> {
            match field(k)?.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(FormatError::NonBinary {
                    row,
                    column: JIGSAW_COLUMNS[k].to_string(),
                    value: other.to_string(),
                }
                .into()),
            }
        };
        let flags = ToxicityFlags {
            toxic: flag(2)?,
            severe_toxic: flag(3)?,
            obscene: flag(4)?,
            threat: flag(5)?,
            insult: flag(6)?,
            identity_hate: flag(7)?,
        };
        out.push(LabeledComment {
            id: field(0)?.to_string(),
            text: field(1)?.to_string(),
            derived_label: derive_category_label(&flags),
            flags,
        });
    }
    Ok(out)
}

/// Rows per derived label.
pub fn label_histogram<'a>(
    labels: impl IntoIterator<Item = &'a ClassLabel>,
) -> BTreeMap<ClassLabel, usize> {
    let mut h = BTreeMap::new();
    for &l in labels {
        *h.entry(l).or_insert(0) += 1;
    }
    h
}

/// Raw positive counts per flag column, for comparison with published
/// dataset statistics.
pub fn column_counts(rows: &[LabeledComment]) -> BTreeMap<&'static str, usize> {
    let mut c = BTreeMap::new();
    for r in rows {
        let f = &r.flags;
        for (name, on) in [
            ("toxic", f.toxic),
            ("severe_toxic", f.severe_toxic),
            ("obscene", f.obscene),
            ("threat", f.threat),
            ("insult", f.insult),
            ("identity_hate", f.identity_hate),
        ] {
            *c.entry(name).or_insert(0) += on as usize;
        }
    }
    c
}
