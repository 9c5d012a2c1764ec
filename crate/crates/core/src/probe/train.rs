// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probe training: a category classifier whose toxicity rows carry the
//! cosine penalty, and a binary logistic probe used as the single-direction
//! baseline. All arithmetic is f64.
//!
//! The category classifier has two heads. `Softmax` is a 6-way softmax over
//! the five toxicity categories plus `non_toxic`. `MultiLabel` keeps only the
//! five toxicity rows, each an independent sigmoid; a `non_toxic` sentence is
//! the all-zero target.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::FeatureRecord;
use super::regularizer::cos_reg_loss_and_grad;
use super::set::ProbeSet;
use crate::data::ClassLabel;
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.01;
const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOptimizer {
    /// Plain minibatch SGD.
    Sgd,
    /// Adam with decoupled weight decay.
    #[default]
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeHead {
    #[default]
    Softmax,
    MultiLabel,
}

/// Hyperparameters shared by the softmax and logistic probes. The learning
/// rate warms up linearly over `warmup_ratio` of all steps, then stays
/// constant. Weight decay is decoupled and skips biases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrainParams {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: ProbeOptimizer,
    #[serde(default)]
    pub head: ProbeHead,
}

impl Default for ProbeTrainParams {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            epochs: 20,
            batch_size: 128,
            lr: 5e-4,
            weight_decay: 0.01,
            warmup_ratio: 0.1,
            seed: 0,
            optimizer: ProbeOptimizer::AdamW,
            head: ProbeHead::Softmax,
        }
    }
}

impl ProbeTrainParams {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::arg("lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::arg("warmup_ratio must lie in [0, 1]"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::arg("lambda and weight_decay must be nonnegative"));
        }
        Ok(())
    }
}

/// `total = classification + lambda * regularization`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    pub regularization: f64,
}

impl LossBreakdown {
    fn new(classification: f64, regularization: f64, lambda: f64) -> Self {
        Self {
            total: classification + lambda * regularization,
            classification,
            regularization,
        }
    }
}

/// Everything a softmax probe run produces.
#[derive(Debug, Clone)]
pub struct ProbeTraining {
    /// The toxicity rows only, in `ClassLabel::TOXIC` order.
    pub probes: ProbeSet,
    /// Per-epoch mean of the minibatch losses.
    pub history: Vec<LossBreakdown>,
    /// All classifier rows in `ClassLabel::ALL` order: six for the softmax
    /// head, the five toxicity rows for the multi-label head.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub train_accuracy: f64,
    /// Accuracy on the validation rows, or on the training rows when none are given.
    pub val_accuracy: f64,
}

/// Cross-entropy plus `lambda` times the cosine penalty over the first
/// `reg_rows` rows of `w`, with gradients. Logits are `x · wᵀ + b`.
pub fn probe_objective(
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    x: ArrayView2<f64>,
    labels: &[usize],
    lambda: f64,
    reg_rows: usize,
) -> Result<(LossBreakdown, Array2<f64>, Array1<f64>)> {
    let n = x.nrows();
    if n == 0 || labels.len() != n {
        return Err(Error::arg(
            "objective needs a nonempty batch with one label per row",
        ));
    }
    let k = w.nrows();
    let mut logits = x.dot(&w.t());
    logits += &b;
    let mut ce = 0.0;
    for (mut row, &y) in logits.outer_iter_mut().zip(labels) {
        if y >= k {
            return Err(Error::arg(format!("label {y} outside {k} classes")));
        }
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
        ce -= row[y].ln();
        row[y] -= 1.0;
    }
    let inv = 1.0 / n as f64;
    ce *= inv;
    logits *= inv;
    let mut gw = logits.t().dot(&x);
    let gb = logits.sum_axis(Axis(0));
    let reg = if reg_rows >= 2 {
        let (r, g) = cos_reg_loss_and_grad(w.slice(s![..reg_rows, ..]))?;
        if lambda != 0.0 {
            let mut top = gw.slice_mut(s![..reg_rows, ..]);
            top.scaled_add(lambda, &g);
        }
        r
    } else {
        0.0
    };
    Ok((LossBreakdown::new(ce, reg, lambda), gw, gb))
}

/// Mean binary cross-entropy over every (row, class) cell of `σ(x · wᵀ + b)`
/// plus `lambda` times the cosine penalty over the first `reg_rows` rows.
/// Label `y` marks class `y` positive; `y >= w.nrows()` is the all-zero target.
pub fn multilabel_objective(
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    x: ArrayView2<f64>,
    labels: &[usize],
    lambda: f64,
    reg_rows: usize,
) -> Result<(LossBreakdown, Array2<f64>, Array1<f64>)> {
    let n = x.nrows();
    if n == 0 || labels.len() != n {
        return Err(Error::arg(
            "objective needs a nonempty batch with one label per row",
        ));
    }
    let k = w.nrows();
    let mut z = x.dot(&w.t());
    z += &b;
    let inv = 1.0 / (n * k) as f64;
    let softplus = |t: f64| t.max(0.0) + (-t.abs()).exp().ln_1p();
    let mut bce = 0.0;
    for (mut row, &y) in z.outer_iter_mut().zip(labels) {
        for (c, v) in row.iter_mut().enumerate() {
            let pos = c == y;
            bce += if pos { softplus(-*v) } else { softplus(*v) };
            *v = (sigmoid(*v) - f64::from(u8::from(pos))) * inv;
        }
    }
    let mut gw = z.t().dot(&x);
    let gb = z.sum_axis(Axis(0));
    let reg = if reg_rows >= 2 {
        let (r, g) = cos_reg_loss_and_grad(w.slice(s![..reg_rows, ..]))?;
        if lambda != 0.0 {
            gw.slice_mut(s![..reg_rows, ..]).scaled_add(lambda, &g);
        }
        r
    } else {
        0.0
    };
    Ok((LossBreakdown::new(bce * inv, reg, lambda), gw, gb))
}

/// Flat parameter vector updated by the shared minibatch loop.
struct Optimizer {
    params: ProbeTrainParams,
    decay: Vec<bool>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    fn new(params: ProbeTrainParams, decay: Vec<bool>) -> Self {
        let n = decay.len();
        Self {
            params,
            decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let wd = self.params.weight_decay;
        match self.params.optimizer {
            ProbeOptimizer::Sgd => {
                for i in 0..theta.len() {
                    if self.decay[i] {
                        theta[i] -= lr * wd * theta[i];
                    }
                    theta[i] -= lr * grad[i];
                }
            }
            ProbeOptimizer::AdamW => {
                let (b1, b2) = ADAM_BETAS;
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                for i in 0..theta.len() {
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
                    if self.decay[i] {
                        theta[i] -= lr * wd * theta[i];
                    }
                    theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Shuffled minibatch loop shared by both probe kinds. `objective` maps the
/// current parameters and a batch of row indices to a loss and gradient.
fn run_minibatches(
    n: usize,
    params: &ProbeTrainParams,
    theta: &mut [f64],
    decay: Vec<bool>,
    rng: &mut ChaCha8Rng,
    mut objective: impl FnMut(&[f64], &[usize]) -> Result<(LossBreakdown, Vec<f64>)>,
) -> Result<Vec<LossBreakdown>> {
    let steps_per_epoch = n.div_ceil(params.batch_size);
    let total_steps = steps_per_epoch * params.epochs;
    let warmup = (params.warmup_ratio * total_steps as f64).ceil() as usize;
    let mut opt = Optimizer::new(*params, decay);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(params.epochs);
    let mut step = 0usize;
    for epoch in 0..params.epochs {
        order.shuffle(rng);
        let (mut c_sum, mut r_sum) = (0.0, 0.0);
        for batch in order.chunks(params.batch_size) {
            let (loss, grad) = objective(theta, batch)?;
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            c_sum += loss.classification;
            r_sum += loss.regularization;
            let lr = if warmup > 0 && step < warmup {
                params.lr * (step + 1) as f64 / warmup as f64
            } else {
                params.lr
            };
            opt.step(theta, &grad, lr);
            step += 1;
        }
        let inv = 1.0 / steps_per_epoch as f64;
        history.push(LossBreakdown::new(c_sum * inv, r_sum * inv, params.lambda));
    }
    Ok(history)
}

fn feature_matrix<'a>(
    rows: impl ExactSizeIterator<Item = &'a [f32]>,
    d: usize,
) -> Result<Array2<f64>> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * d);
    for (i, r) in rows.enumerate() {
        if r.len() != d {
            return Err(Error::arg(format!(
                "feature row {i} has dimension {}, expected {d}",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "feature row {i} has non-finite entries"
            )));
        }
        flat.extend(r.iter().map(|&v| f64::from(v)));
    }
    Ok(Array2::from_shape_vec((n, d), flat).expect("shape checked"))
}

fn gaussian_init(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Softmax: the argmax row. Multi-label: the argmax row if its logit is
/// positive, otherwise `non_toxic`.
fn accuracy(
    head: ProbeHead,
    w: ArrayView2<f64>,
    b: ArrayView1<f64>,
    x: ArrayView2<f64>,
    labels: &[usize],
) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let logits = x.dot(&w.t()) + &b;
    let predict = |row: ArrayView1<f64>| {
        let i = argmax(row);
        match head {
            ProbeHead::Softmax => i,
            ProbeHead::MultiLabel if row[i] > 0.0 => i,
            ProbeHead::MultiLabel => ClassLabel::NonToxic.index(),
        }
    };
    let hits = logits
        .outer_iter()
        .zip(labels)
        .filter(|(row, &y)| predict(row.view()) == y)
        .count();
    hits as f64 / labels.len() as f64
}

fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains the 6-way probe classifier on `train` and reports accuracy on
/// `val`. Labels index rows in `ClassLabel::ALL` order; the cosine penalty
/// covers the five toxicity rows.
pub fn train_probes(
    train: &[FeatureRecord],
    val: &[FeatureRecord],
    params: &ProbeTrainParams,
) -> Result<ProbeTraining> {
    params.validate()?;
    let Some(first) = train.first() else {
        return Err(Error::DegenerateData("no training records".into()));
    };
    let d = first.features.len();
    if d == 0 {
        return Err(Error::arg("features are empty"));
    }
    let labels: Vec<usize> = train.iter().map(|r| r.class_label.index()).collect();
    let mut distinct = labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "training data has a single class ({})",
            first.class_label
        )));
    }
    let x = feature_matrix(train.iter().map(|r| r.features.as_slice()), d)?;
    let reg_rows = ClassLabel::TOXIC.len();
    let k = match params.head {
        ProbeHead::Softmax => ClassLabel::ALL.len(),
        ProbeHead::MultiLabel => reg_rows,
    };
    let objective = match params.head {
        ProbeHead::Softmax => probe_objective,
        ProbeHead::MultiLabel => multilabel_objective,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut theta = gaussian_init(k * d, &mut rng);
    theta.extend(std::iter::repeat_n(0.0, k));
    let decay: Vec<bool> = (0..k * d + k).map(|i| i < k * d).collect();

    let history = run_minibatches(
        train.len(),
        params,
        &mut theta,
        decay,
        &mut rng,
        |theta, batch| {
            let w = ArrayView2::from_shape((k, d), &theta[..k * d]).expect("shape");
            let b = ArrayView1::from(&theta[k * d..]);
            let xb = x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, gw, gb) = objective(w, b, xb.view(), &yb, params.lambda, reg_rows)?;
            let mut g = gw.into_raw_vec_and_offset().0;
            g.extend(gb.iter());
            Ok((loss, g))
        },
    )?;

    let weights = Array2::from_shape_vec((k, d), theta[..k * d].to_vec()).expect("shape");
    let bias = Array1::from(theta[k * d..].to_vec());
    let train_accuracy = accuracy(params.head, weights.view(), bias.view(), x.view(), &labels);
    let val_accuracy = if val.is_empty() {
        train_accuracy
    } else {
        let xv = feature_matrix(val.iter().map(|r| r.features.as_slice()), d)?;
        let yv: Vec<usize> = val.iter().map(|r| r.class_label.index()).collect();
        accuracy(params.head, weights.view(), bias.view(), xv.view(), &yv)
    };

    let toxic = weights.slice(s![..reg_rows, ..]).mapv(|v| v as f32);
    let categories = ClassLabel::TOXIC
        .iter()
        .map(|c| c.as_str().to_string())
        .collect();
    let mut probes = ProbeSet::new(toxic, categories)?
        .with_bias(bias.slice(s![..reg_rows]).mapv(|v| v as f32))?;
    probes.lambda = params.lambda;
    probes.val_accuracy = val_accuracy;
    probes.seed = params.seed;
    Ok(ProbeTraining {
        probes,
        history,
        weights,
        bias,
        train_accuracy,
        val_accuracy,
    })
}

/// Binary logistic probe: one direction separating toxic from non-toxic.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleProbe {
    pub vector: Array1<f64>,
    pub bias: f64,
    pub history: Vec<f64>,
    pub val_accuracy: f64,
}

impl SingleProbe {
    pub const CATEGORY: &'static str = "toxicity";

    /// A one-row probe set named `"toxicity"`.
    pub fn to_probe_set(&self, params: &ProbeTrainParams) -> Result<ProbeSet> {
        let row = self.vector.mapv(|v| v as f32).insert_axis(Axis(0));
        let mut set = ProbeSet::new(row, vec![Self::CATEGORY.to_string()])?
            .with_bias(Array1::from(vec![self.bias as f32]))?;
        set.lambda = 0.0;
        set.val_accuracy = self.val_accuracy;
        set.seed = params.seed;
        Ok(set)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `σ(x·w + b)` with gradients.
fn logistic_objective(
    w: ArrayView1<f64>,
    b: f64,
    x: ArrayView2<f64>,
    y: &[bool],
) -> (f64, Array1<f64>, f64) {
    let n = x.nrows() as f64;
    let z = x.dot(&w) + b;
    let mut loss = 0.0;
    let mut dz = Array1::<f64>::zeros(z.len());
    for (i, (&zi, &yi)) in z.iter().zip(y).enumerate() {
        // log(1 + e^{-|z|}) form keeps both branches finite.
        let softplus = |t: f64| t.max(0.0) + (-t.abs()).exp().ln_1p();
        loss += if yi { softplus(-zi) } else { softplus(zi) };
        dz[i] = (sigmoid(zi) - f64::from(u8::from(yi))) / n;
    }
    (loss / n, x.t().dot(&dz), dz.sum())
}

/// Trains a logistic classifier on `(features, toxic)` pairs and returns its
/// weight vector. Uses the same optimizer and schedule as [`train_probes`].
pub fn train_single_probe(
    train: &[(Vec<f32>, bool)],
    val: &[(Vec<f32>, bool)],
    params: &ProbeTrainParams,
) -> Result<SingleProbe> {
    params.validate()?;
    let Some(first) = train.first() else {
        return Err(Error::DegenerateData("no training records".into()));
    };
    let d = first.0.len();
    if d == 0 {
        return Err(Error::arg("features are empty"));
    }
    let y: Vec<bool> = train.iter().map(|r| r.1).collect();
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::DegenerateData(
            "training data has a single class".into(),
        ));
    }
    let x = feature_matrix(train.iter().map(|r| r.0.as_slice()), d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut theta = gaussian_init(d, &mut rng);
    theta.push(0.0);
    let decay: Vec<bool> = (0..=d).map(|i| i < d).collect();
    let history = run_minibatches(
        train.len(),
        params,
        &mut theta,
        decay,
        &mut rng,
        |theta, batch| {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<bool> = batch.iter().map(|&i| y[i]).collect();
            let (loss, gw, gb) =
                logistic_objective(ArrayView1::from(&theta[..d]), theta[d], xb.view(), &yb);
            let mut g = gw.to_vec();
            g.push(gb);
            Ok((LossBreakdown::new(loss, 0.0, 0.0), g))
        },
    )?
    .into_iter()
    .map(|l| l.total)
    .collect();
    let vector = Array1::from(theta[..d].to_vec());
    let bias = theta[d];
    let accuracy = |rows: &[(Vec<f32>, bool)]| -> Result<f64> {
        let xm = feature_matrix(rows.iter().map(|r| r.0.as_slice()), d)?;
        let z = xm.dot(&vector) + bias;
        let hits = z
            .iter()
            .zip(rows)
            .filter(|(&zi, r)| (zi > 0.0) == r.1)
            .count();
        Ok(hits as f64 / rows.len() as f64)
    };
    let val_accuracy = if val.is_empty() {
        accuracy(train)?
    } else {
        accuracy(val)?
    };
    Ok(SingleProbe {
        vector,
        bias,
        history,
        val_accuracy,
    })
}
