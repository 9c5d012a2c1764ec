// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset ingestion, splitting, prompt files and synthetic corpora.

mod jigsaw;
mod labels;
mod prompts;
mod split;
mod synthetic;

pub use jigsaw::{
    column_counts, label_histogram, load_jigsaw, read_jigsaw, LabeledComment, JIGSAW_COLUMNS,
};
pub use labels::{derive_category_label, ClassLabel, ToxicityFlags};
pub use prompts::{load_prompts, parse_prompts, write_prompts, PromptRecord};
pub use split::split;
pub use synthetic::{
    gen_synthetic, LabeledSentence, SyntheticBundle, SyntheticPrompt, SyntheticSpec,
    JIGSAW_CATEGORY_SHARES, JIGSAW_OTHER_RATIO,
};
