// SPDX-License-Identifier: MIT OR Apache-2.0

//! Category probes: feature extraction, training with the pairwise cosine
//! penalty, serialization and analysis.

mod analysis;
mod features;
mod regularizer;
mod set;
mod train;

pub use analysis::{
    mean_abs_similarity, pairwise_similarity, similarity_report, top_tokens_report,
    vocab_top_tokens,
};
pub(crate) use features::mean_rows;
pub use features::{featurize, FeatureRecord};
pub use regularizer::{cos_reg_loss, cos_reg_loss_and_grad};
pub use set::{ProbeSet, FEATURE_SOURCE_AVG_LAST_HIDDEN, PROBE_FORMAT_VERSION};
pub use train::{
    multilabel_objective, probe_objective, train_probes, train_single_probe, LossBreakdown,
    ProbeHead, ProbeOptimizer, ProbeTrainParams, ProbeTraining, SingleProbe,
};
