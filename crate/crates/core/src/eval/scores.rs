// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::ClassLabel;
use crate::error::{Error, Result, ScorerError};

/// Aggregate score key; never used for bucketing.
pub const TOXICITY_KEY: &str = "toxicity";

/// Score keys understood by [`categorize_prompt`].
pub const RECOGNIZED_KEYS: [&str; 7] = [
    TOXICITY_KEY,
    "insult",
    "profanity",
    "threat",
    "identity_attack",
    "flirtation",
    "sexually_explicit",
];

/// Per-attribute toxicity scores in `[0, 1]`, keyed by attribute name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct CategoryScores(BTreeMap<String, f64>);

impl CategoryScores {
    pub fn new(scores: BTreeMap<String, f64>) -> std::result::Result<Self, ScorerError> {
        for (k, &v) in &scores {
            if !(0.0..=1.0).contains(&v) {
                return Err(ScorerError::OutOfRange {
                    key: k.clone(),
                    value: v,
                });
            }
        }
        Ok(CategoryScores(scores))
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.get(key).copied()
    }

    /// Aggregate toxicity, 0 when absent.
    pub fn toxicity(&self) -> f64 {
        self.get(TOXICITY_KEY).unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn into_inner(self) -> BTreeMap<String, f64> {
        self.0
    }
}

impl TryFrom<BTreeMap<String, f64>> for CategoryScores {
    type Error = ScorerError;

    fn try_from(m: BTreeMap<String, f64>) -> std::result::Result<Self, ScorerError> {
        CategoryScores::new(m)
    }
}

impl From<CategoryScores> for BTreeMap<String, f64> {
    fn from(s: CategoryScores) -> Self {
        s.0
    }
}

impl<const N: usize> From<[(&str, f64); N]> for CategoryScores {
    /// Panics on out-of-range values; intended for literals.
    fn from(pairs: [(&str, f64); N]) -> Self {
        CategoryScores::new(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
            .expect("scores in [0, 1]")
    }
}

/// Attribute key a stub scorer reports for each toxicity category.
pub fn attribute_key(category: ClassLabel) -> Option<&'static str> {
    match category {
        ClassLabel::Insult => Some("insult"),
        ClassLabel::IdentityHate => Some("identity_attack"),
        ClassLabel::Obscene => Some("sexually_explicit"),
        ClassLabel::Threat => Some("threat"),
        ClassLabel::Other | ClassLabel::NonToxic => None,
    }
}

/// Buckets a prompt into one of the four evaluation categories.
///
/// `profanity` merges into insult, `flirtation` and `sexually_explicit` into
/// obscene, `identity_attack` into identity_hate; merged scores take the
/// max. The aggregate `toxicity` key and unrecognized keys are ignored. Ties
/// resolve threat > identity_hate > obscene > insult.
pub fn categorize_prompt(scores: &CategoryScores) -> Result<ClassLabel> {
    const PRIORITY: [(ClassLabel, &[&str]); 4] = [
        (ClassLabel::Threat, &["threat"]),
        (ClassLabel::IdentityHate, &["identity_attack"]),
        (ClassLabel::Obscene, &["flirtation", "sexually_explicit"]),
        (ClassLabel::Insult, &["insult", "profanity"]),
    ];
    let mut best: Option<(ClassLabel, f64)> = None;
    for (category, keys) in PRIORITY {
        let merged = keys
            .iter()
            .filter_map(|k| scores.get(k))
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        if let Some(v) = merged {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((category, v));
            }
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::arg("scores contain no recognized category attribute"))
}
