// SPDX-License-Identifier: MIT OR Apache-2.0

//! Next-token training for the desk-scale model: hand-written backprop
//! through the pre-LN blocks and an AdamW optimizer.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{gelu_grad, LnCache, Model, Weights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTrainParams {
    pub epochs: usize,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    /// Fraction of sequences held out for the before/after loss report.
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for LmTrainParams {
    fn default() -> Self {
        LmTrainParams {
            epochs: 8,
            batch_size: 16,
            lr: 3e-3,
            weight_decay: 0.01,
            heldout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTrainReport {
    pub initial_heldout_loss: f64,
    pub final_heldout_loss: f64,
    /// Mean training cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    pub train_sequences: usize,
    pub heldout_sequences: usize,
}

/// Trains a freshly initialized model on `corpus`.
///
/// Sequences longer than the context are cut into context-sized chunks;
/// chunks shorter than two tokens carry no target and are dropped. With
/// zero epochs the returned model is exactly `Model::init(config, seed)`.
pub fn fit_tiny_lm(
    corpus: &[Vec<u32>],
    config: ModelConfig,
    params: &LmTrainParams,
) -> Result<(Model, LmTrainReport)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::arg("training corpus is empty"));
    }
    if params.batch_size == 0 {
        return Err(Error::arg("batch_size must be at least 1"));
    }
    if !(0.0..1.0).contains(&params.heldout_fraction) {
        return Err(Error::arg("heldout_fraction must lie in [0, 1)"));
    }
    let mut chunks = Vec::new();
    for seq in corpus {
        if let Some(&bad) = seq.iter().find(|&&t| t as usize >= config.vocab_size) {
            return Err(Error::arg(format!("token id {bad} out of range")));
        }
        for chunk in seq.chunks(config.max_seq_len) {
            if chunk.len() >= 2 {
                chunks.push(chunk.to_vec());
            }
        }
    }
    if chunks.is_empty() {
        return Err(Error::arg(
            "corpus has no sequence with at least two tokens",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut model = Model::init(config, params.seed)?;
    chunks.shuffle(&mut rng);
    let n_heldout = ((chunks.len() as f64) * params.heldout_fraction).round() as usize;
    let n_heldout = n_heldout.min(chunks.len() - 1);
    let heldout: Vec<Vec<u32>> = chunks.split_off(chunks.len() - n_heldout);
    let train = chunks;
    let eval_set = if heldout.is_empty() { &train } else { &heldout };

    let initial_heldout_loss = mean_loss(&model, eval_set);
    let mut opt = AdamW::new(&config, params.lr, params.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut tokens = 0usize;
        for batch in order.chunks(params.batch_size) {
            let n_targets: usize = batch.iter().map(|&i| train[i].len() - 1).sum();
            let scale = 1.0 / n_targets as f32;
            let mut grads = Weights::zeros(&config);
            for &i in batch {
                loss_sum += accumulate_gradients(&model, &train[i], &mut grads, scale) as f64;
            }
            tokens += n_targets;
            opt.step(&mut model, &grads);
        }
        let mean = loss_sum / tokens as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        epoch_losses.push(mean);
    }
    let final_heldout_loss = mean_loss(&model, eval_set);
    let report = LmTrainReport {
        initial_heldout_loss,
        final_heldout_loss,
        epoch_losses,
        train_sequences: train.len(),
        heldout_sequences: heldout.len(),
    };
    Ok((model, report))
}

/// Mean next-token cross-entropy (nats per predicted token).
pub fn mean_loss(model: &Model, seqs: &[Vec<u32>]) -> f64 {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for seq in seqs {
        let cache = model.forward_cached(seq);
        let logits = cache.final_hidden.dot(&model.unembedding().t());
        for t in 0..seq.len() - 1 {
            let row = logits.row(t);
            let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
            let lse = row
                .iter()
                .map(|&v| (v as f64 - max).exp())
                .sum::<f64>()
                .ln()
                + max;
            total += lse - row[seq[t + 1] as usize] as f64;
            count += 1;
        }
    }
    total / count.max(1) as f64
}

/// Adds `scale ·` d(sum of next-token cross-entropies)/d(weights) for one
/// sequence into `grads` and returns the unscaled loss sum.
pub fn accumulate_gradients(model: &Model, ids: &[u32], grads: &mut Weights, scale: f32) -> f32 {
    let cfg = *model.config();
    let w = model.weights();
    let cache = model.forward_cached(ids);
    let unembed = model.unembedding();
    let logits = cache.final_hidden.dot(&unembed.t());
    let t_len = ids.len();

    let mut loss = 0.0f32;
    let mut dlogits = Array2::<f32>::zeros(logits.dim());
    for t in 0..t_len - 1 {
        let row = logits.row(t);
        let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let mut p = row.mapv(|v| (v - max).exp());
        let sum = p.sum();
        p /= sum;
        let target = ids[t + 1] as usize;
        loss -= p[target].max(f32::MIN_POSITIVE).ln();
        p[target] -= 1.0;
        dlogits.row_mut(t).assign(&(p * scale));
    }

    let d_unembed = match grads.lm_head.as_mut() {
        Some(head) => head,
        None => &mut grads.tok_embed,
    };
    general_mat_mul(1.0, &dlogits.t(), &cache.final_hidden, 1.0, d_unembed);
    let dfinal = dlogits.dot(unembed);
    let mut dx = ln_backward(
        &dfinal,
        &cache.lnf,
        &w.lnf_g,
        &mut grads.lnf_g,
        &mut grads.lnf_b,
    );

    for l in (0..cfg.n_layers).rev() {
        let lw = &w.layers[l];
        let lc = &cache.layers[l];
        let lg = &mut grads.layers[l];

        general_mat_mul(1.0, &lc.act.t(), &dx, 1.0, &mut lg.w2);
        let mut dh1 = dx.dot(&lw.w2.t());
        Zip::from(&mut dh1)
            .and(&lc.h1)
            .for_each(|g, &h| *g *= gelu_grad(h));
        general_mat_mul(1.0, &lc.m.t(), &dh1, 1.0, &mut lg.w1);
        let dm = dh1.dot(&lw.w1.t());
        let dx_mid = &dx + &ln_backward(&dm, &lc.ln2, &lw.ln2_g, &mut lg.ln2_g, &mut lg.ln2_b);

        general_mat_mul(1.0, &lc.attn.t(), &dx_mid, 1.0, &mut lg.wo);
        let dattn = dx_mid.dot(&lw.wo.t());
        let (dq, dk, dv) = attention_backward(&dattn, &lc.q, &lc.k, &lc.v, &lc.probs);
        general_mat_mul(1.0, &lc.a.t(), &dq, 1.0, &mut lg.wq);
        general_mat_mul(1.0, &lc.a.t(), &dk, 1.0, &mut lg.wk);
        general_mat_mul(1.0, &lc.a.t(), &dv, 1.0, &mut lg.wv);
        let mut da = dq.dot(&lw.wq.t());
        general_mat_mul(1.0, &dk, &lw.wk.t(), 1.0, &mut da);
        general_mat_mul(1.0, &dv, &lw.wv.t(), 1.0, &mut da);
        dx = dx_mid + ln_backward(&da, &lc.ln1, &lw.ln1_g, &mut lg.ln1_g, &mut lg.ln1_b);
    }

    for (t, &id) in ids.iter().enumerate() {
        let row = dx.row(t);
        let mut tok = grads.tok_embed.row_mut(id as usize);
        tok += &row;
        let mut pos = grads.pos_embed.row_mut(t);
        pos += &row;
    }
    loss
}

fn ln_backward(
    dy: &Array2<f32>,
    cache: &LnCache,
    g: &Array1<f32>,
    dg: &mut Array1<f32>,
    db: &mut Array1<f32>,
) -> Array2<f32> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f32;
    let mut dx = dy * g;
    for ((mut row, xhat), &rstd) in dx
        .axis_iter_mut(Axis(0))
        .zip(cache.xhat.axis_iter(Axis(0)))
        .zip(cache.rstd.iter())
    {
        let mean_d = row.sum() / d;
        let mean_dx = row.dot(&xhat) / d;
        Zip::from(&mut row)
            .and(&xhat)
            .for_each(|v, &xh| *v = rstd * (*v - mean_d - xh * mean_dx));
    }
    dx
}

fn attention_backward(
    dout: &Array2<f32>,
    q: &Array2<f32>,
    k: &Array2<f32>,
    v: &Array2<f32>,
    probs: &[Array2<f32>],
) -> (Array2<f32>, Array2<f32>, Array2<f32>) {
    let n_heads = probs.len();
    let d = q.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut dq = Array2::<f32>::zeros(q.dim());
    let mut dk = Array2::<f32>::zeros(k.dim());
    let mut dv = Array2::<f32>::zeros(v.dim());
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let doh = dout.slice(cols);
        let dp = doh.dot(&v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&doh));
        let mut ds = dp;
        for (mut ds_row, p_row) in ds.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
            let inner = ds_row.dot(&p_row);
            Zip::from(&mut ds_row)
                .and(&p_row)
                .for_each(|g, &pv| *g = pv * (*g - inner) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}

/// AdamW with decoupled weight decay on matrix-shaped tensors.
struct AdamW {
    lr: f32,
    weight_decay: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: i32,
    m: Weights,
    v: Weights,
    decay: Vec<bool>,
}

impl AdamW {
    fn new(config: &ModelConfig, lr: f32, weight_decay: f32) -> Self {
        let m = Weights::zeros(config);
        let decay = m.decay_mask();
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            step: 0,
            v: Weights::zeros(config),
            m,
            decay,
        }
    }

    fn step(&mut self, model: &mut Model, grads: &Weights) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.eps, self.lr, self.weight_decay);
        let weights = model.weights_mut();
        let params = weights.tensors_mut();
        let grads = grads.named_tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((p, (_, _, g)), m), v), &decay) in params
            .into_iter()
            .zip(grads)
            .zip(ms)
            .zip(vs)
            .zip(&self.decay)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                if decay {
                    p[i] -= lr * wd * p[i];
                }
                p[i] -= lr * update;
            }
        }
    }
}
