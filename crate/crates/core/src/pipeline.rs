// SPDX-License-Identifier: MIT OR Apache-2.0

//! Glue shared by the command-line tool and the end-to-end tests: the
//! desk-scale model shape and the step from labelled sentences to probe
//! features.

use crate::data::{split, LabeledSentence, SyntheticBundle, SyntheticSpec};
use crate::error::Result;
use crate::lm::{fit_tiny_lm, LmTrainParams, LmTrainReport, Model, ModelConfig};
use crate::probe::{featurize, FeatureRecord};

/// Share of labelled records used for probe training; the rest validate.
pub const TRAIN_RATIO: f64 = 0.9;

/// The two-layer model used with [`SyntheticSpec::desk_scale`] worlds.
pub fn desk_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        vocab_size,
        max_seq_len: 32,
        tied_embeddings: true,
    }
}

/// One feature record per sentence, in input order.
pub fn feature_records(sentences: &[LabeledSentence], model: &Model) -> Result<Vec<FeatureRecord>> {
    sentences
        .iter()
        .map(|s| {
            Ok(FeatureRecord {
                features: featurize(&s.tokens, model)?.to_vec(),
                class_label: s.label,
                source_id: s.id.clone(),
            })
        })
        .collect()
}

/// `(features, is_toxic)` pairs for the binary baseline probe.
pub fn binary_pairs(records: &[FeatureRecord]) -> Vec<(Vec<f32>, bool)> {
    records
        .iter()
        .map(|r| (r.features.clone(), r.class_label.is_toxic()))
        .collect()
}

/// A generated world, the model trained on its corpus, and the stratified
/// probe-feature split.
#[derive(Debug, Clone)]
pub struct DeskSetup {
    pub bundle: SyntheticBundle,
    pub model: Model,
    pub lm_report: LmTrainReport,
    pub train: Vec<FeatureRecord>,
    pub val: Vec<FeatureRecord>,
}

impl DeskSetup {
    /// Everything is derived from `seed`.
    pub fn build(seed: u64) -> Result<Self> {
        Self::from_spec(
            &SyntheticSpec::desk_scale(seed),
            &LmTrainParams {
                seed,
                ..LmTrainParams::default()
            },
        )
    }

    pub fn from_spec(spec: &SyntheticSpec, lm: &LmTrainParams) -> Result<Self> {
        let bundle = crate::data::gen_synthetic(spec)?;
        let (model, lm_report) =
            fit_tiny_lm(&bundle.corpus, desk_model_config(bundle.vocab.len()), lm)?;
        let records = feature_records(&bundle.labeled, &model)?;
        let (train, val) = split(&records, TRAIN_RATIO, spec.seed, |r: &FeatureRecord| {
            r.class_label
        })?;
        Ok(Self {
            bundle,
            model,
            lm_report,
            train,
            val,
        })
    }
}
