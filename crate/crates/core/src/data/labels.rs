// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-label class used for probe training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Insult,
    IdentityHate,
    Obscene,
    Threat,
    Other,
    NonToxic,
}

impl ClassLabel {
    /// The five toxicity categories, in probe-row order.
    pub const TOXIC: [ClassLabel; 5] = [
        ClassLabel::Insult,
        ClassLabel::IdentityHate,
        ClassLabel::Obscene,
        ClassLabel::Threat,
        ClassLabel::Other,
    ];

    /// All six classifier outputs; toxic rows first, `non_toxic` last.
    pub const ALL: [ClassLabel; 6] = [
        ClassLabel::Insult,
        ClassLabel::IdentityHate,
        ClassLabel::Obscene,
        ClassLabel::Threat,
        ClassLabel::Other,
        ClassLabel::NonToxic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Insult => "insult",
            ClassLabel::IdentityHate => "identity_hate",
            ClassLabel::Obscene => "obscene",
            ClassLabel::Threat => "threat",
            ClassLabel::Other => "other",
            ClassLabel::NonToxic => "non_toxic",
        }
    }

    /// Row of this class in the six-way classifier.
    pub fn index(self) -> usize {
        ClassLabel::ALL
            .iter()
            .position(|&c| c == self)
            .expect("listed")
    }

    pub fn is_toxic(self) -> bool {
        self != ClassLabel::NonToxic
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassLabel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown class label `{s}`")))
    }
}

/// The six binary columns of a Jigsaw row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToxicityFlags {
    pub toxic: bool,
    pub severe_toxic: bool,
    pub obscene: bool,
    pub threat: bool,
    pub insult: bool,
    pub identity_hate: bool,
}

/// Collapses multi-label flags into one class.
///
/// Rows with `toxic = 0` are non-toxic. Otherwise the rarest positive
/// category wins (threat, identity_hate, insult, obscene, by Jigsaw
/// counts); toxic rows with no category flag are `other`. `severe_toxic`
/// is ignored.
pub fn derive_category_label(flags: &ToxicityFlags) -> ClassLabel {
    if !flags.toxic {
        ClassLabel::NonToxic
    } else if flags.threat {
        ClassLabel::Threat
    } else if flags.identity_hate {
        ClassLabel::IdentityHate
    } else if flags.insult {
        ClassLabel::Insult
    } else if flags.obscene {
        ClassLabel::Obscene
    } else {
        ClassLabel::Other
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_table_over_all_flag_combinations() {
        for bits in 0u8..64 {
            let f = ToxicityFlags {
                toxic: bits & 1 != 0,
                severe_toxic: bits & 2 != 0,
                obscene: bits & 4 != 0,
                threat: bits & 8 != 0,
                insult: bits & 16 != 0,
                identity_hate: bits & 32 != 0,
            };
            // Hand-written table, keyed on (toxic, threat, identity, insult, obscene).
            let expected = match (f.toxic, f.threat, f.identity_hate, f.insult, f.obscene) {
                (false, _, _, _, _) => ClassLabel::NonToxic,
                (true, true, _, _, _) => ClassLabel::Threat,
                (true, false, true, _, _) => ClassLabel::IdentityHate,
                (true, false, false, true, _) => ClassLabel::Insult,
                (true, false, false, false, true) => ClassLabel::Obscene,
                (true, false, false, false, false) => ClassLabel::Other,
            };
            assert_eq!(derive_category_label(&f), expected, "flags {bits:06b}");
        }
    }

    #[test]
    fn insult_beats_obscene() {
        let f = ToxicityFlags {
            toxic: true,
            insult: true,
            obscene: true,
            ..Default::default()
        };
        assert_eq!(derive_category_label(&f), ClassLabel::Insult);
    }

    #[test]
    fn names_round_trip() {
        for c in ClassLabel::ALL {
            assert_eq!(c.as_str().parse::<ClassLabel>().unwrap(), c);
            assert_eq!(
                serde_json::to_string(&c).unwrap(),
                format!("\"{}\"", c.as_str())
            );
        }
    }
}
