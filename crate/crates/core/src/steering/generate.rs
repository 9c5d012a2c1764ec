// SPDX-License-Identifier: MIT OR Apache-2.0

//! Greedy generation with per-step probe selection and subtraction.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::config::{ScalingMode, SelectionMode, SteeringConfig};
use super::select::{dynamic_alpha, intervene, select_probe, weighted_probe, Selection};
use crate::error::{Error, Result};
use crate::lm::{greedy_step, CausalLm, Model};
use crate::probe::{mean_rows, ProbeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringDecision {
    pub step: usize,
    pub similarities: Vec<f64>,
    pub selected: Option<usize>,
    pub kl: Option<f64>,
    pub alpha_applied: f64,
    pub token_emitted: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub prompt_ids: Vec<u32>,
    pub output_ids: Vec<u32>,
    pub decisions: Vec<SteeringDecision>,
    /// Transformer forward passes run by this generation.
    pub forward_pass_count: u64,
}

fn check_prompt(prompt: &[u32], model: &Model, max_new_tokens: usize) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::arg("prompt is empty"));
    }
    let max = model.config().max_seq_len.saturating_sub(max_new_tokens);
    if prompt.len() > max {
        return Err(Error::Length {
            len: prompt.len(),
            max,
        });
    }
    Ok(())
}

/// Plain greedy decoding. Decisions record no selection.
pub fn generate_unsteered(
    prompt: &[u32],
    model: &Model,
    max_new_tokens: usize,
) -> Result<GenerationResult> {
    check_prompt(prompt, model, max_new_tokens)?;
    let layer = model.config().n_layers;
    let mut ids = prompt.to_vec();
    let mut decisions = Vec::with_capacity(max_new_tokens);
    for step in 0..max_new_tokens {
        let hooks = model.forward_with_hooks(&ids, layer)?;
        let token = greedy_step(hooks.logits_last_token.view())?;
        decisions.push(SteeringDecision {
            step,
            similarities: Vec::new(),
            selected: None,
            kl: None,
            alpha_applied: 0.0,
            token_emitted: token,
        });
        ids.push(token);
    }
    Ok(GenerationResult {
        output_ids: ids[prompt.len()..].to_vec(),
        prompt_ids: prompt.to_vec(),
        decisions,
        forward_pass_count: max_new_tokens as u64,
    })
}

/// Greedy decoding where each step may subtract a probe direction from the
/// last hidden state before the LM head. One forward pass per token.
pub fn generate_steered(
    prompt: &[u32],
    model: &Model,
    probes: &ProbeSet,
    config: &SteeringConfig,
) -> Result<GenerationResult> {
    let layer = resolve_layer(model, probes, config)?;
    check_prompt(prompt, model, config.max_new_tokens)?;
    let unit = probes.unit_vectors();
    let mut ids = prompt.to_vec();
    let mut decisions = Vec::with_capacity(config.max_new_tokens);
    let mut passes = 0u64;
    for step in 0..config.max_new_tokens {
        let hooks = model.forward_with_hooks(&ids, layer)?;
        passes += 1;
        let x_avg = mean_rows(hooks.pre_ffn_hidden.view());
        let out = steer_position(
            model,
            probes,
            &unit,
            config,
            x_avg.view(),
            hooks.final_hidden_last_token.view(),
            hooks.logits_last_token,
        )?;
        let token = greedy_step(out.logits.view())?;
        decisions.push(SteeringDecision {
            step,
            similarities: out.selection.similarities,
            selected: out.selection.selected,
            kl: out.kl,
            alpha_applied: out.alpha,
            token_emitted: token,
        });
        ids.push(token);
    }
    Ok(GenerationResult {
        output_ids: ids[prompt.len()..].to_vec(),
        prompt_ids: prompt.to_vec(),
        decisions,
        forward_pass_count: passes,
    })
}

fn resolve_layer(model: &Model, probes: &ProbeSet, config: &SteeringConfig) -> Result<usize> {
    config.validate()?;
    if probes.d_model() != model.config().d_model {
        return Err(Error::arg(format!(
            "probes have dimension {}, model has {}",
            probes.d_model(),
            model.config().d_model
        )));
    }
    if config.selection_mode == SelectionMode::Single && probes.len() != 1 {
        return Err(Error::arg(format!(
            "single mode needs one probe, got {}",
            probes.len()
        )));
    }
    let layer = config.intervention_layer.unwrap_or(model.config().n_layers);
    if layer > model.config().n_layers {
        return Err(Error::arg(format!(
            "intervention layer {layer} outside 1..={}",
            model.config().n_layers
        )));
    }
    Ok(layer)
}

struct StepOutcome {
    selection: Selection,
    kl: Option<f64>,
    alpha: f64,
    logits: Array1<f32>,
}

/// Selection, scaling and intervention for one position. `logits` are the
/// unsteered logits, returned untouched when nothing is selected.
fn steer_position(
    model: &Model,
    probes: &ProbeSet,
    unit: &Array2<f64>,
    config: &SteeringConfig,
    x_avg: ArrayView1<f32>,
    h_last: ArrayView1<f32>,
    logits: Array1<f32>,
) -> Result<StepOutcome> {
    let selection = if x_avg.iter().all(|&v| v == 0.0) {
        Selection {
            selected: None,
            similarities: vec![0.0; probes.len()],
        }
    } else {
        select_probe(probes, x_avg, config)?
    };
    let Some(i) = selection.selected else {
        return Ok(StepOutcome {
            selection,
            kl: None,
            alpha: 0.0,
            logits,
        });
    };
    let direction: Array1<f64> = match config.selection_mode {
        SelectionMode::WeightedSum => weighted_probe(probes, &selection.similarities)?,
        SelectionMode::Argmax | SelectionMode::Single => unit.row(i).to_owned(),
    };
    let (alpha, kl) = match config.scaling_mode {
        ScalingMode::Fixed => (config.alpha_fixed, None),
        ScalingMode::Dynamic => {
            let (a, kl) = dynamic_alpha(h_last, direction.view(), model, config)?;
            (a, Some(kl))
        }
    };
    let edited = intervene(h_last, direction.view(), alpha)?;
    Ok(StepOutcome {
        selection,
        kl,
        alpha,
        logits: model.lm_head_logits(edited.view())?,
    })
}

/// A model whose every position is steered as during generation, with
/// `x_avg` taken over the prefix ending at that position. Used to measure
/// the perplexity of the steered model.
pub struct SteeredLm<'a> {
    model: &'a Model,
    probes: &'a ProbeSet,
    config: SteeringConfig,
    layer: usize,
    unit: Array2<f64>,
}

impl<'a> SteeredLm<'a> {
    pub fn new(model: &'a Model, probes: &'a ProbeSet, config: SteeringConfig) -> Result<Self> {
        let layer = resolve_layer(model, probes, &config)?;
        Ok(Self {
            model,
            probes,
            config,
            layer,
            unit: probes.unit_vectors(),
        })
    }
}

impl CausalLm for SteeredLm<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn max_seq_len(&self) -> usize {
        self.model.config().max_seq_len
    }

    fn position_logits(&self, ids: &[u32]) -> Result<Array2<f32>> {
        let hooks = self.model.forward_with_hooks(ids, self.layer)?;
        let d = self.model.config().d_model;
        let mut out = Array2::<f32>::zeros((ids.len(), self.vocab_size()));
        let mut prefix = Array1::<f64>::zeros(d);
        for t in 0..ids.len() {
            prefix += &hooks.pre_ffn_hidden.row(t).mapv(f64::from);
            let x_avg = prefix.mapv(|v| (v / (t + 1) as f64) as f32);
            let h = hooks.final_hidden.row(t);
            let plain = self.model.lm_head_logits(h)?;
            let step = steer_position(
                self.model,
                self.probes,
                &self.unit,
                &self.config,
                x_avg.view(),
                h,
                plain,
            )?;
            out.row_mut(t).assign(&step.logits);
        }
        Ok(out)
    }
}

/// Closing line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Mean alpha over steps that selected a probe; `None` if none did.
    pub mean_alpha: Option<f64>,
    pub selected_fraction: f64,
    pub category_histogram: BTreeMap<String, usize>,
}

impl TraceSummary {
    pub fn from_decisions<'a>(
        decisions: impl IntoIterator<Item = &'a SteeringDecision>,
        categories: &[String],
    ) -> Self {
        let mut total = 0usize;
        let mut alpha_sum = 0.0;
        let mut histogram: BTreeMap<String, usize> =
            categories.iter().map(|c| (c.clone(), 0)).collect();
        let mut selected = 0usize;
        for d in decisions {
            total += 1;
            if let Some(i) = d.selected {
                selected += 1;
                alpha_sum += d.alpha_applied;
                let name = categories.get(i).cloned().unwrap_or_else(|| i.to_string());
                *histogram.entry(name).or_default() += 1;
            }
        }
        Self {
            mean_alpha: (selected > 0).then(|| alpha_sum / selected as f64),
            selected_fraction: if total == 0 {
                0.0
            } else {
                selected as f64 / total as f64
            },
            category_histogram: histogram,
        }
    }
}

/// One decision per line, then the summary line.
pub fn write_trace(
    mut out: impl Write,
    decisions: &[SteeringDecision],
    categories: &[String],
) -> Result<TraceSummary> {
    for d in decisions {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    let summary = TraceSummary::from_decisions(decisions, categories);
    serde_json::to_writer(&mut out, &summary)?;
    out.write_all(b"\n")?;
    Ok(summary)
}
