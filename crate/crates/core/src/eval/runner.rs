// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt-suite evaluation: generate a continuation per prompt, score it,
//! bucket by prompt category and aggregate.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{distinct_n, perplexity};
use super::scorer::Scorer;
use super::scores::{categorize_prompt, CategoryScores};
use crate::data::{ClassLabel, PromptRecord};
use crate::error::{Error, Result};
use crate::lm::{Model, Vocab};
use crate::probe::ProbeSet;
use crate::steering::{generate_steered, generate_unsteered, SteeredLm, SteeringConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Row label in comparison tables, e.g. "unsteered" or "multiple".
    pub label: String,
    pub steering: SteeringConfig,
    pub workers: usize,
    pub ppl_window: usize,
    pub ppl_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            label: "steered".into(),
            steering: SteeringConfig::default(),
            workers: 1,
            ppl_window: 32,
            ppl_stride: 16,
        }
    }
}

/// Optional inputs that enable extra report fields.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalExtras<'a> {
    /// Token stream for perplexity.
    pub ppl_corpus: Option<&'a [u32]>,
    /// Planted lexicons, for per-category emission rates.
    pub lexicons: Option<&'a BTreeMap<ClassLabel, Vec<u32>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptOutcome {
    pub index: usize,
    pub prompt: String,
    pub category: Option<ClassLabel>,
    pub output_ids: Vec<u32>,
    pub output_text: String,
    pub scores: Option<CategoryScores>,
    /// Set when any stage failed; the row is excluded from aggregates.
    pub error: Option<String>,
    pub mean_alpha: Option<f64>,
    pub selected_steps: usize,
}

impl PromptOutcome {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: usize,
    pub mean_toxicity: f64,
    /// Fraction of generations containing a token from this category's lexicon.
    pub emission_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub sample_count: usize,
    pub completed: usize,
    pub mean_toxicity: f64,
    pub perplexity: Option<f64>,
    pub dist1: f64,
    pub dist2: f64,
    pub dist3: f64,
    pub per_category: BTreeMap<ClassLabel, CategoryStats>,
    /// Mean alpha over all steered steps of all prompts.
    pub mean_alpha: Option<f64>,
    pub config: EvalConfig,
    pub steered: bool,
    pub rows: Vec<PromptOutcome>,
}

fn evaluate_prompt(
    index: usize,
    rec: &PromptRecord,
    model: &Model,
    probes: Option<&ProbeSet>,
    vocab: &Vocab,
    config: &EvalConfig,
    scorer: &dyn Scorer,
) -> PromptOutcome {
    let category = rec.category.or_else(|| categorize_prompt(&rec.scores).ok());
    let mut row = PromptOutcome {
        index,
        prompt: rec.text.clone(),
        category,
        output_ids: Vec::new(),
        output_text: String::new(),
        scores: None,
        error: None,
        mean_alpha: None,
        selected_steps: 0,
    };
    if category.is_none() {
        row.error = Some("prompt has no category scores".into());
        return row;
    }
    let run = || -> Result<_> {
        let ids = vocab.encode(&rec.text)?;
        let gen = match probes {
            Some(p) => generate_steered(&ids, model, p, &config.steering)?,
            None => generate_unsteered(&ids, model, config.steering.max_new_tokens)?,
        };
        let text = vocab.decode(&gen.output_ids);
        let scores = scorer.score(&text)?;
        Ok((gen, text, scores))
    };
    match run() {
        Ok((gen, text, scores)) => {
            let alphas: Vec<f64> = gen
                .decisions
                .iter()
                .filter(|d| d.selected.is_some())
                .map(|d| d.alpha_applied)
                .collect();
            row.selected_steps = alphas.len();
            row.mean_alpha =
                (!alphas.is_empty()).then(|| alphas.iter().sum::<f64>() / alphas.len() as f64);
            row.output_ids = gen.output_ids;
            row.output_text = text;
            row.scores = Some(scores);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Evaluates every prompt. `probes = None` runs plain greedy decoding.
/// Prompts are split across `config.workers` threads; rows come back in
/// prompt order, so results do not depend on the worker count.
pub fn run_eval(
    model: &Model,
    probes: Option<&ProbeSet>,
    prompts: &[PromptRecord],
    vocab: &Vocab,
    config: &EvalConfig,
    scorer: &dyn Scorer,
    extras: EvalExtras<'_>,
) -> Result<EvalReport> {
    if prompts.is_empty() {
        return Err(Error::arg("no prompts to evaluate"));
    }
    config.steering.validate()?;
    let workers = config.workers.clamp(1, prompts.len());
    let mut rows: Vec<PromptOutcome> = if workers == 1 {
        prompts
            .iter()
            .enumerate()
            .map(|(i, p)| evaluate_prompt(i, p, model, probes, vocab, config, scorer))
            .collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    s.spawn(move || {
                        prompts
                            .iter()
                            .enumerate()
                            .skip(w)
                            .step_by(workers)
                            .map(|(i, p)| {
                                evaluate_prompt(i, p, model, probes, vocab, config, scorer)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };
    rows.sort_by_key(|r| r.index);

    let done: Vec<&PromptOutcome> = rows.iter().filter(|r| r.is_complete()).collect();
    let toks: Vec<Vec<u32>> = done.iter().map(|r| r.output_ids.clone()).collect();
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let tox: Vec<f64> = done
        .iter()
        .filter_map(|r| r.scores.as_ref().map(|s| s.toxicity()))
        .collect();
    let dist = |n| {
        if toks.is_empty() {
            Ok(0.0)
        } else {
            distinct_n(&toks, n)
        }
    };

    let mut per_category = BTreeMap::new();
    for cat in ClassLabel::TOXIC {
        let bucket: Vec<&&PromptOutcome> =
            done.iter().filter(|r| r.category == Some(cat)).collect();
        if bucket.is_empty() {
            continue;
        }
        let t: Vec<f64> = bucket
            .iter()
            .filter_map(|r| r.scores.as_ref().map(|s| s.toxicity()))
            .collect();
        let emission = extras.lexicons.and_then(|l| l.get(&cat)).map(|lex| {
            let lex: HashSet<u32> = lex.iter().copied().collect();
            let hits = bucket
                .iter()
                .filter(|r| r.output_ids.iter().any(|t| lex.contains(t)))
                .count();
            hits as f64 / bucket.len() as f64
        });
        per_category.insert(
            cat,
            CategoryStats {
                count: bucket.len(),
                mean_toxicity: mean(&t),
                emission_rate: emission,
            },
        );
    }

    let perplexity = match extras.ppl_corpus {
        None => None,
        Some(corpus) => Some(
            match probes {
                Some(p) => perplexity(
                    &SteeredLm::new(model, p, config.steering)?,
                    corpus,
                    config.ppl_window,
                    config.ppl_stride,
                )?,
                None => perplexity(model, corpus, config.ppl_window, config.ppl_stride)?,
            }
            .value,
        ),
    };

    let (alpha_sum, steps) = done
        .iter()
        .filter_map(|r| {
            r.mean_alpha
                .map(|a| (a * r.selected_steps as f64, r.selected_steps))
        })
        .fold((0.0, 0usize), |(s, n), (a, k)| (s + a, n + k));

    Ok(EvalReport {
        label: config.label.clone(),
        sample_count: rows.len(),
        completed: done.len(),
        mean_toxicity: mean(&tox),
        perplexity,
        dist1: dist(1)?,
        dist2: dist(2)?,
        dist3: dist(3)?,
        per_category,
        mean_alpha: (steps > 0).then(|| alpha_sum / steps as f64),
        config: config.clone(),
        steered: probes.is_some(),
        rows,
    })
}

/// Overall metrics, one row per report.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>10}  {:>7}  {:>7}  {:>7}  {:>6}",
        "Method", "Toxicity", "PPL", "Dist-1", "Dist-2", "Dist-3", "n"
    );
    for r in reports {
        let ppl = r
            .perplexity
            .map_or_else(|| "-".to_string(), |p| format!("{p:.4}"));
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.4}  {:>10}  {:>7.4}  {:>7.4}  {:>7.4}  {:>6}",
            r.label, r.mean_toxicity, ppl, r.dist1, r.dist2, r.dist3, r.completed
        );
    }
    out
}

/// Mean toxicity per prompt category, one row per report. When emission
/// rates are present they follow in parentheses.
pub fn category_table(reports: &[EvalReport]) -> String {
    let cats = [
        ClassLabel::Insult,
        ClassLabel::IdentityHate,
        ClassLabel::Obscene,
        ClassLabel::Threat,
    ];
    let width = reports
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "Method");
    for c in cats {
        let _ = write!(out, "  {:>20}", c.as_str());
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<width$}", r.label);
        for c in cats {
            let cell = match r.per_category.get(&c) {
                None => "-".to_string(),
                Some(s) => match s.emission_rate {
                    Some(e) => format!("{:.4} ({:.3})", s.mean_toxicity, e),
                    None => format!("{:.4}", s.mean_toxicity),
                },
            };
            let _ = write!(out, "  {cell:>20}");
        }
        out.push('\n');
    }
    out
}
