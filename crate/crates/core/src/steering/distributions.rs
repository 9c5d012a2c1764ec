// SPDX-License-Identifier: MIT OR Apache-2.0

//! Next-token distribution utilities for dynamic scaling: nucleus sets,
//! union renormalization and KL divergence. All f64.

use ndarray::ArrayView1;

use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-6;

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<f64>) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let m = logits.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let e: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// Smallest set of most probable indices whose mass reaches `p`, returned in
/// ascending index order. Equal probabilities are taken lower index first.
/// `p = 1` returns every index.
pub fn top_p_set(probs: &[f64], p: f64) -> Result<Vec<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::arg(format!("p must lie in (0, 1], got {p}")));
    }
    if probs.is_empty() || probs.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(Error::arg("probabilities must be finite and nonnegative"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::arg(format!("probabilities sum to {total}, not 1")));
    }
    if p >= 1.0 {
        return Ok((0..probs.len()).collect());
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut take = order.len();
    for (k, &i) in order.iter().enumerate() {
        mass += probs[i];
        if mass >= p {
            take = k + 1;
            break;
        }
    }
    let mut set = order[..take].to_vec();
    set.sort_unstable();
    Ok(set)
}

/// Unsteered (`q`) and steered (`p`) distributions restricted to the union
/// of their nucleus sets and renormalized there.
#[derive(Debug, Clone, PartialEq)]
pub struct UnionDistributions {
    /// Vocabulary ids of the union, ascending.
    pub support: Vec<usize>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

pub fn union_distributions(
    logits_unsteered: ArrayView1<f64>,
    logits_steered: ArrayView1<f64>,
    top_p: f64,
) -> Result<UnionDistributions> {
    if logits_unsteered.len() != logits_steered.len() {
        return Err(Error::arg("logit vectors differ in length"));
    }
    let q_full = softmax(logits_unsteered)?;
    let p_full = softmax(logits_steered)?;
    let mut support = top_p_set(&q_full, top_p)?;
    support.extend(top_p_set(&p_full, top_p)?);
    support.sort_unstable();
    support.dedup();
    let restrict = |full: &[f64]| {
        let mass: f64 = support.iter().map(|&i| full[i]).sum();
        support
            .iter()
            .map(|&i| full[i] / mass)
            .collect::<Vec<f64>>()
    };
    let q = restrict(&q_full);
    let p = restrict(&p_full);
    Ok(UnionDistributions { support, q, p })
}

/// `Σ p_i ln(p_i / q_i)` with `0 · ln(0/q) = 0`. Rounding below zero is
/// clamped to 0.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::arg(format!(
            "support sizes differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if !(pi.is_finite() && qi.is_finite() && pi >= 0.0 && qi >= 0.0) {
            return Err(Error::arg(format!("entry {i} is not a probability")));
        }
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::arg(format!(
                "entry {i} has mass under p but none under q"
            )));
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}
