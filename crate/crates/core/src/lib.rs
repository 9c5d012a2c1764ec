// SPDX-License-Identifier: MIT OR Apache-2.0

//! Category-specific toxicity probes for inference-time steering of a
//! decoder-only language model.
//!
//! The crate is organised as the pipeline runs:
//!
//! - [`lm`]: a small pre-LN transformer with hooks on the pre-FFN residual
//!   stream and the final hidden states, plus a trainer and file format.
//! - [`data`]: Jigsaw-style dataset ingestion, stratified splits, prompt
//!   files and a synthetic planted-lexicon corpus generator.
//! - [`probe`]: multi-class probe training with a pairwise cosine penalty,
//!   a binary baseline probe, and vocabulary-space analysis.
//! - [`steering`]: per-step probe selection, KL-driven scaling and the
//!   traced generation loop.
//! - [`eval`]: perplexity, distinct-n, emission rate, toxicity scorers and
//!   the evaluation runner.
//! - [`pipeline`]: the desk-scale model shape and feature extraction shared
//!   by the command-line tool and the end-to-end tests.

pub mod data;
pub mod error;
pub mod eval;
pub mod lm;
pub mod pipeline;
pub mod probe;
pub mod steering;

pub use error::{Error, FormatError, Result, ScorerError};
