// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pre-layer-norm GPT-style decoder with activation hooks.
//!
//! Each block computes
//!
//! ```text
//! x_mid = x + Attn(LN1(x))        <- "pre-FFN" residual value
//! x_out = x_mid + FFN(LN2(x_mid))
//! ```
//!
//! and the final hidden state is `LN_f(x_out)` of the last block. The LM head
//! is a plain projection of that final hidden state onto the unembedding
//! matrix (the token embedding matrix when embeddings are tied), so
//! `lm_head_logits(final_hidden_last_token)` reproduces the forward logits
//! exactly.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};

pub(crate) const LN_EPS: f32 = 1e-5;

/// Weights of one transformer block. Linear maps act on row vectors (`x · W`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Array1<f32>,
    pub ln1_b: Array1<f32>,
    pub wq: Array2<f32>,
    pub wk: Array2<f32>,
    pub wv: Array2<f32>,
    pub wo: Array2<f32>,
    pub ln2_g: Array1<f32>,
    pub ln2_b: Array1<f32>,
    /// `d_model × d_ff`
    pub w1: Array2<f32>,
    /// `d_ff × d_model`
    pub w2: Array2<f32>,
}

/// All trainable tensors of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `vocab_size × d_model`
    pub tok_embed: Array2<f32>,
    /// `max_seq_len × d_model`
    pub pos_embed: Array2<f32>,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Array1<f32>,
    pub lnf_b: Array1<f32>,
    /// Separate unembedding, present only when embeddings are untied.
    pub lm_head: Option<Array2<f32>>,
}

impl LayerWeights {
    fn zeros(c: &ModelConfig) -> Self {
        let d = c.d_model;
        LayerWeights {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w1: Array2::zeros((d, c.d_ff)),
            w2: Array2::zeros((c.d_ff, d)),
        }
    }
}

impl Weights {
    /// All-zero tensors with the shapes implied by `config`. Used for gradients.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        Weights {
            tok_embed: Array2::zeros((config.vocab_size, d)),
            pos_embed: Array2::zeros((config.max_seq_len, d)),
            layers: (0..config.n_layers)
                .map(|_| LayerWeights::zeros(config))
                .collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            lm_head: (!config.tied_embeddings).then(|| Array2::zeros((config.vocab_size, d))),
        }
    }

    /// GPT-2 style initialization, deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 0.02f32;
        let proj_std = std / (2.0 * config.n_layers as f32).sqrt();
        let mut w = Weights::zeros(config);
        let mut fill = |a: &mut [f32], sd: f32| {
            let normal = Normal::new(0.0f32, sd).expect("positive std");
            a.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        };
        fill(w.tok_embed.as_slice_mut().unwrap(), std);
        fill(w.pos_embed.as_slice_mut().unwrap(), 0.01);
        for layer in &mut w.layers {
            layer.ln1_g.fill(1.0);
            layer.ln2_g.fill(1.0);
            fill(layer.wq.as_slice_mut().unwrap(), std);
            fill(layer.wk.as_slice_mut().unwrap(), std);
            fill(layer.wv.as_slice_mut().unwrap(), std);
            fill(layer.wo.as_slice_mut().unwrap(), proj_std);
            fill(layer.w1.as_slice_mut().unwrap(), std);
            fill(layer.w2.as_slice_mut().unwrap(), proj_std);
        }
        w.lnf_g.fill(1.0);
        if let Some(head) = w.lm_head.as_mut() {
            fill(head.as_slice_mut().unwrap(), std);
        }
        w
    }

    /// Tensors in canonical file order, with their names and shapes.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        fn t2(name: String, a: &Array2<f32>) -> (String, Vec<usize>, &[f32]) {
            (
                name,
                a.shape().to_vec(),
                a.as_slice().expect("standard layout"),
            )
        }
        fn t1(name: String, a: &Array1<f32>) -> (String, Vec<usize>, &[f32]) {
            (
                name,
                a.shape().to_vec(),
                a.as_slice().expect("standard layout"),
            )
        }
        let mut out = vec![
            t2("embed.tok".into(), &self.tok_embed),
            t2("embed.pos".into(), &self.pos_embed),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push(t1(format!("layer.{i}.ln1.g"), &l.ln1_g));
            out.push(t1(format!("layer.{i}.ln1.b"), &l.ln1_b));
            out.push(t2(format!("layer.{i}.attn.wq"), &l.wq));
            out.push(t2(format!("layer.{i}.attn.wk"), &l.wk));
            out.push(t2(format!("layer.{i}.attn.wv"), &l.wv));
            out.push(t2(format!("layer.{i}.attn.wo"), &l.wo));
            out.push(t1(format!("layer.{i}.ln2.g"), &l.ln2_g));
            out.push(t1(format!("layer.{i}.ln2.b"), &l.ln2_b));
            out.push(t2(format!("layer.{i}.ffn.w1"), &l.w1));
            out.push(t2(format!("layer.{i}.ffn.w2"), &l.w2));
        }
        out.push(t1("ln_f.g".into(), &self.lnf_g));
        out.push(t1("ln_f.b".into(), &self.lnf_b));
        if let Some(head) = &self.lm_head {
            out.push(t2("lm_head".into(), head));
        }
        out
    }

    /// Mutable flat views in the same order as [`Weights::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        out.push(self.tok_embed.as_slice_mut().unwrap());
        out.push(self.pos_embed.as_slice_mut().unwrap());
        for l in &mut self.layers {
            out.push(l.ln1_g.as_slice_mut().unwrap());
            out.push(l.ln1_b.as_slice_mut().unwrap());
            out.push(l.wq.as_slice_mut().unwrap());
            out.push(l.wk.as_slice_mut().unwrap());
            out.push(l.wv.as_slice_mut().unwrap());
            out.push(l.wo.as_slice_mut().unwrap());
            out.push(l.ln2_g.as_slice_mut().unwrap());
            out.push(l.ln2_b.as_slice_mut().unwrap());
            out.push(l.w1.as_slice_mut().unwrap());
            out.push(l.w2.as_slice_mut().unwrap());
        }
        out.push(self.lnf_g.as_slice_mut().unwrap());
        out.push(self.lnf_b.as_slice_mut().unwrap());
        if let Some(head) = self.lm_head.as_mut() {
            out.push(head.as_slice_mut().unwrap());
        }
        out
    }

    /// Names of tensors that are decayed during training (matrices only).
    pub(crate) fn decay_mask(&self) -> Vec<bool> {
        self.named_tensors()
            .iter()
            .map(|(_, shape, _)| shape.len() == 2)
            .collect()
    }

    fn check_shapes(&self, c: &ModelConfig) -> Result<()> {
        let expected = Weights::zeros(c);
        let want = expected.named_tensors();
        let have = self.named_tensors();
        if want.len() != have.len() {
            return Err(Error::arg(format!(
                "expected {} tensors for this config, found {}",
                want.len(),
                have.len()
            )));
        }
        for ((name, ws, _), (_, hs, _)) in want.iter().zip(have.iter()) {
            if ws != hs {
                return Err(Error::arg(format!(
                    "tensor {name} has shape {hs:?}, expected {ws:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Activations captured from a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HookBundle {
    /// Residual stream entering the FFN sub-block of the intervention layer, `T × d_model`.
    pub pre_ffn_hidden: Array2<f32>,
    /// Output of the final layer norm, `T × d_model`.
    pub final_hidden: Array2<f32>,
    pub final_hidden_last_token: Array1<f32>,
    pub logits_last_token: Array1<f32>,
}

pub(crate) struct LnCache {
    pub xhat: Array2<f32>,
    pub rstd: Array1<f32>,
}

pub(crate) struct LayerCache {
    pub ln1: LnCache,
    pub a: Array2<f32>,
    pub q: Array2<f32>,
    pub k: Array2<f32>,
    pub v: Array2<f32>,
    /// One `T × T` row-stochastic matrix per head.
    pub probs: Vec<Array2<f32>>,
    pub attn: Array2<f32>,
    pub x_mid: Array2<f32>,
    pub ln2: LnCache,
    pub m: Array2<f32>,
    pub h1: Array2<f32>,
    pub act: Array2<f32>,
}

pub(crate) struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub lnf: LnCache,
    pub final_hidden: Array2<f32>,
}

/// A decoder-only language model. Weights are immutable once built, so a
/// `Model` can be shared between threads; the only interior state is a
/// counter of executed forward passes.
#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    weights: Weights,
    passes: AtomicU64,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            config: self.config,
            weights: self.weights.clone(),
            passes: AtomicU64::new(0),
        }
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.weights == other.weights
    }
}

impl Model {
    pub fn new(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        weights.check_shapes(&config)?;
        Ok(Model {
            config,
            weights,
            passes: AtomicU64::new(0),
        })
    }

    /// Randomly initialized model, deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Model::new(config, Weights::init(&config, seed))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Weights {
        &mut self.weights
    }

    pub fn into_weights(self) -> Weights {
        self.weights
    }

    /// Number of transformer forward passes executed on this instance.
    pub fn forward_pass_count(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    /// Rows used to project hidden states onto the vocabulary.
    pub fn unembedding(&self) -> &Array2<f32> {
        self.weights
            .lm_head
            .as_ref()
            .unwrap_or(&self.weights.tok_embed)
    }

    pub fn check_tokens(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::arg("token sequence is empty"));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::Length {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::arg(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Runs one forward pass and returns the activations steering reads.
    ///
    /// `intervention_layer` is 1-based; `n_layers` selects the last block.
    pub fn forward_with_hooks(&self, ids: &[u32], intervention_layer: usize) -> Result<HookBundle> {
        if intervention_layer == 0 || intervention_layer > self.config.n_layers {
            return Err(Error::arg(format!(
                "intervention layer {intervention_layer} outside 1..={}",
                self.config.n_layers
            )));
        }
        self.check_tokens(ids)?;
        let cache = self.forward_cached(ids);
        let pre_ffn_hidden = cache.layers[intervention_layer - 1].x_mid.clone();
        let final_hidden_last_token = cache.final_hidden.row(ids.len() - 1).to_owned();
        let logits_last_token = self.project(final_hidden_last_token.view());
        Ok(HookBundle {
            pre_ffn_hidden,
            final_hidden: cache.final_hidden,
            final_hidden_last_token,
            logits_last_token,
        })
    }

    /// Projects a final hidden state onto the vocabulary.
    pub fn lm_head_logits(&self, hidden: ArrayView1<f32>) -> Result<Array1<f32>> {
        if hidden.len() != self.config.d_model {
            return Err(Error::arg(format!(
                "hidden has dimension {}, model expects {}",
                hidden.len(),
                self.config.d_model
            )));
        }
        Ok(self.project(hidden))
    }

    fn project(&self, hidden: ArrayView1<f32>) -> Array1<f32> {
        self.unembedding().dot(&hidden)
    }

    /// Logits at every position, `T × vocab_size`, from one forward pass.
    pub fn logits_all(&self, ids: &[u32]) -> Result<Array2<f32>> {
        self.check_tokens(ids)?;
        let cache = self.forward_cached(ids);
        Ok(cache.final_hidden.dot(&self.unembedding().t()))
    }

    /// Full forward pass keeping every intermediate needed for backprop.
    /// Callers validate `ids`.
    pub(crate) fn forward_cached(&self, ids: &[u32]) -> ForwardCache {
        self.passes.fetch_add(1, Ordering::Relaxed);
        let c = &self.config;
        let w = &self.weights;
        let t_len = ids.len();
        let mut x = Array2::<f32>::zeros((t_len, c.d_model));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(t);
            row += &w.tok_embed.row(id as usize);
            row += &w.pos_embed.row(t);
        }

        let mut layers = Vec::with_capacity(c.n_layers);
        for lw in &w.layers {
            let (a, ln1) = layer_norm(&x, &lw.ln1_g, &lw.ln1_b);
            let q = a.dot(&lw.wq);
            let k = a.dot(&lw.wk);
            let v = a.dot(&lw.wv);
            let (attn, probs) = causal_attention(&q, &k, &v, c.n_heads);
            let x_mid = &x + &attn.dot(&lw.wo);
            let (m, ln2) = layer_norm(&x_mid, &lw.ln2_g, &lw.ln2_b);
            let h1 = m.dot(&lw.w1);
            let act = h1.mapv(gelu);
            x = &x_mid + &act.dot(&lw.w2);
            layers.push(LayerCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                attn,
                x_mid,
                ln2,
                m,
                h1,
                act,
            });
        }
        let (final_hidden, lnf) = layer_norm(&x, &w.lnf_g, &w.lnf_b);
        ForwardCache {
            layers,
            lnf,
            final_hidden,
        }
    }
}

pub(crate) fn layer_norm(
    x: &Array2<f32>,
    g: &Array1<f32>,
    b: &Array1<f32>,
) -> (Array2<f32>, LnCache) {
    let d = x.ncols() as f32;
    let mut xhat = x.clone();
    let mut rstd = Array1::<f32>::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f32>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

/// Multi-head causal self-attention. Returns the concatenated head outputs
/// (before the output projection) and each head's attention matrix.
fn causal_attention(
    q: &Array2<f32>,
    k: &Array2<f32>,
    v: &Array2<f32>,
    n_heads: usize,
) -> (Array2<f32>, Vec<Array2<f32>>) {
    let (t_len, d) = q.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = Array2::<f32>::zeros((t_len, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut p = qh.dot(&kh.t()) * scale;
        for (i, mut row) in p.axis_iter_mut(Axis(0)).enumerate() {
            let max = row
                .iter()
                .take(i + 1)
                .fold(f32::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                if j <= i {
                    *v = (*v - max).exp();
                    sum += *v;
                } else {
                    *v = 0.0;
                }
            }
            row.mapv_inplace(|v| v / sum);
        }
        out.slice_mut(cols).assign(&p.dot(&vh));
        probs.push(p);
    }
    (out, probs)
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f32) -> f32 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Index of the largest logit; ties go to the lowest index.
pub fn greedy_step(logits: ArrayView1<f32>) -> Result<u32> {
    if logits.is_empty() {
        return Err(Error::arg("empty logits"));
    }
    let mut best = 0usize;
    let mut best_val = f32::NEG_INFINITY;
    for (i, &v) in logits.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("logit {i} is {v}")));
        }
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    Ok(best as u32)
}
