// SPDX-License-Identifier: MIT OR Apache-2.0

//! Desk-scale decoder-only language model with activation hooks.

mod config;
mod io;
mod model;
mod train;
mod vocab;

pub use config::ModelConfig;
pub use io::{
    decode_model, encode_model, load_model, save_model, ModelHeader, TensorEntry,
    MODEL_FORMAT_VERSION,
};
pub use model::{greedy_step, HookBundle, LayerWeights, Model, Weights};
pub use train::{accumulate_gradients, fit_tiny_lm, mean_loss, LmTrainParams, LmTrainReport};
pub use vocab::Vocab;

/// Next-token scoring surface used by evaluation code.
pub trait CausalLm {
    fn vocab_size(&self) -> usize;
    fn max_seq_len(&self) -> usize;
    /// Logits for every position of `ids`, shape `len × vocab_size`; row `t`
    /// scores the token at `t + 1`.
    fn position_logits(&self, ids: &[u32]) -> crate::Result<ndarray::Array2<f32>>;
}

impl CausalLm for Model {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn max_seq_len(&self) -> usize {
        self.config().max_seq_len
    }

    fn position_logits(&self, ids: &[u32]) -> crate::Result<ndarray::Array2<f32>> {
        self.logits_all(ids)
    }
}
