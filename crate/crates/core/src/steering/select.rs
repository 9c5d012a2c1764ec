// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probe selection, intervention and per-step scale estimation.

use ndarray::{Array1, ArrayView1};

use super::config::{KlDirection, SelectionMode, SteeringConfig};
use super::distributions::{kl_divergence, union_distributions};
use crate::error::{Error, Result};
use crate::lm::Model;
use crate::probe::ProbeSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub selected: Option<usize>,
    /// `cos(w_i, x_avg)` for every probe row.
    pub similarities: Vec<f64>,
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Cosine of each probe row against `x_avg`.
pub fn probe_similarities(probes: &ProbeSet, x_avg: ArrayView1<f32>) -> Result<Vec<f64>> {
    if x_avg.len() != probes.d_model() {
        return Err(Error::arg(format!(
            "activation has dimension {}, probes expect {}",
            x_avg.len(),
            probes.d_model()
        )));
    }
    let x = x_avg.mapv(f64::from);
    let xn = norm(x.view());
    if xn == 0.0 {
        return Err(Error::arg("cannot select a probe for a zero activation"));
    }
    if !xn.is_finite() {
        return Err(Error::Numeric("activation has non-finite entries".into()));
    }
    Ok(probes
        .unit_vectors()
        .dot(&x)
        .iter()
        .map(|v| v / xn)
        .collect())
}

/// Picks the probe most aligned with `x_avg`. With `use_negative_cos` off,
/// nothing is selected when every similarity is negative. Single mode always
/// selects row 0.
pub fn select_probe(
    probes: &ProbeSet,
    x_avg: ArrayView1<f32>,
    config: &SteeringConfig,
) -> Result<Selection> {
    let similarities = probe_similarities(probes, x_avg)?;
    if config.selection_mode == SelectionMode::Single {
        if probes.len() != 1 {
            return Err(Error::arg(format!(
                "single mode needs one probe, got {}",
                probes.len()
            )));
        }
        return Ok(Selection {
            selected: Some(0),
            similarities,
        });
    }
    let mut best = 0;
    for (i, &s) in similarities.iter().enumerate() {
        if s > similarities[best] {
            best = i;
        }
    }
    let selected = (config.use_negative_cos || similarities[best] >= 0.0).then_some(best);
    Ok(Selection {
        selected,
        similarities,
    })
}

/// `Σ softmax(similarities)_i · ŵ_i`.
pub fn weighted_probe(probes: &ProbeSet, similarities: &[f64]) -> Result<Array1<f64>> {
    if similarities.len() != probes.len() {
        return Err(Error::arg("one similarity per probe is required"));
    }
    if similarities.iter().any(|s| !s.is_finite()) {
        return Err(Error::arg("similarities must be finite"));
    }
    let m = similarities
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = similarities.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let unit = probes.unit_vectors();
    let mut out = Array1::<f64>::zeros(probes.d_model());
    for (row, w) in unit.outer_iter().zip(&e) {
        out.scaled_add(w / z, &row);
    }
    Ok(out)
}

/// `h − alpha · probe / ‖probe‖`.
pub fn intervene(
    h_last: ArrayView1<f32>,
    probe: ArrayView1<f64>,
    alpha: f64,
) -> Result<Array1<f32>> {
    if h_last.len() != probe.len() {
        return Err(Error::arg("hidden state and probe differ in dimension"));
    }
    let pn = norm(probe);
    if pn == 0.0 || !pn.is_finite() {
        return Err(Error::arg("probe has zero or non-finite norm"));
    }
    let scale = alpha / pn;
    Ok(h_last
        .iter()
        .zip(probe.iter())
        .map(|(&h, &p)| (f64::from(h) - scale * p) as f32)
        .collect())
}

/// Scale for this step from the divergence between next-token
/// distributions with and without a reference-strength edit. Only the LM
/// head is evaluated. Returns `(alpha, kl)`.
pub fn dynamic_alpha(
    h_last: ArrayView1<f32>,
    probe: ArrayView1<f64>,
    model: &Model,
    config: &SteeringConfig,
) -> Result<(f64, f64)> {
    let unsteered = model.lm_head_logits(h_last)?.mapv(f64::from);
    let edited = intervene(h_last, probe, config.alpha_probe)?;
    let steered = model.lm_head_logits(edited.view())?.mapv(f64::from);
    let d = union_distributions(unsteered.view(), steered.view(), config.top_p)?;
    let kl = match config.kl_direction {
        KlDirection::SteeredFromUnsteered => kl_divergence(&d.p, &d.q)?,
        KlDirection::UnsteeredFromSteered => kl_divergence(&d.q, &d.p)?,
    };
    Ok((config.alpha_from_kl(kl), kl))
}
