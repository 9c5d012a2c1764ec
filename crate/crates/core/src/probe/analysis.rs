// SPDX-License-Identifier: MIT OR Apache-2.0

//! Similarity between probe rows and projection of probes onto the token
//! embedding table.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView1};

use super::set::ProbeSet;
use crate::error::{Error, Result};
use crate::lm::Model;

/// Cosine between every pair of probe rows. Diagonal is 1.
pub fn pairwise_similarity(probes: &ProbeSet) -> Array2<f64> {
    let unit = probes.unit_vectors();
    let mut sim = unit.dot(&unit.t());
    for i in 0..sim.nrows() {
        sim[[i, i]] = 1.0;
        for j in 0..i {
            let v = 0.5 * (sim[[i, j]] + sim[[j, i]]);
            sim[[i, j]] = v;
            sim[[j, i]] = v;
        }
    }
    sim
}

/// Mean of `|cos|` over distinct pairs; 0 for a single probe.
pub fn mean_abs_similarity(probes: &ProbeSet) -> f64 {
    let sim = pairwise_similarity(probes);
    let n = sim.nrows();
    let pairs = n * (n - 1) / 2;
    if pairs == 0 {
        return 0.0;
    }
    let sum: f64 = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| sim[[i, j]].abs())
        .sum();
    sum / pairs as f64
}

/// Pair-by-pair comparison of two probe sets over the same categories,
/// printed as percentages.
pub fn similarity_report(without: &ProbeSet, with: &ProbeSet) -> Result<String> {
    if without.categories() != with.categories() {
        return Err(Error::arg("probe sets cover different categories"));
    }
    let (a, b) = (pairwise_similarity(without), pairwise_similarity(with));
    let cats = without.categories();
    let width = cats
        .iter()
        .flat_map(|x| cats.iter().map(move |y| x.len() + y.len() + 3))
        .max()
        .unwrap_or(0)
        .max("Category pair".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>14}  {:>14}  {:>8}",
        "Category pair", "w/o cos-reg", "w/ cos-reg", "change"
    );
    for i in 0..cats.len() {
        for j in i + 1..cats.len() {
            let pair = format!("{} - {}", cats[i], cats[j]);
            let (x, y) = (100.0 * a[[i, j]], 100.0 * b[[i, j]]);
            let _ = writeln!(
                out,
                "{pair:<width$}  {x:>13.1}%  {y:>13.1}%  {:>+7.1}%",
                y - x
            );
        }
    }
    let (ma, mb) = (
        100.0 * mean_abs_similarity(without),
        100.0 * mean_abs_similarity(with),
    );
    let _ = writeln!(
        out,
        "{:<width$}  {ma:>13.1}%  {mb:>13.1}%  {:>+7.1}%",
        "mean |cos|",
        mb - ma
    );
    Ok(out)
}

/// The `k` token ids whose embedding rows are most cosine-similar to
/// `probe`, in descending order; ties go to the lower id. Zero embedding
/// rows score 0.
pub fn vocab_top_tokens(
    probe: ArrayView1<f32>,
    model: &Model,
    k: usize,
) -> Result<Vec<(u32, f32)>> {
    let emb = &model.weights().tok_embed;
    let (v, d) = emb.dim();
    if probe.len() != d {
        return Err(Error::arg(format!(
            "probe has dimension {}, model expects {d}",
            probe.len()
        )));
    }
    if k == 0 || k > v {
        return Err(Error::arg(format!("k must lie in 1..={v}, got {k}")));
    }
    let p = probe.mapv(f64::from);
    let pn = p.dot(&p).sqrt();
    if pn == 0.0 || !pn.is_finite() {
        return Err(Error::arg("probe has zero or non-finite norm"));
    }
    let mut scored: Vec<(u32, f64)> = emb
        .outer_iter()
        .enumerate()
        .map(|(id, row)| {
            let r = row.mapv(f64::from);
            let rn = r.dot(&r).sqrt();
            let cos = if rn == 0.0 {
                0.0
            } else {
                r.dot(&p) / (rn * pn)
            };
            (id as u32, cos)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(id, c)| (id, c as f32))
        .collect())
}

/// One line per category: its top tokens, already decoded to words.
pub fn top_tokens_report(rows: &[(String, Vec<String>)]) -> String {
    let width = rows
        .iter()
        .map(|r| r.0.len())
        .max()
        .unwrap_or(0)
        .max("Category".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  Top tokens", "Category");
    for (cat, words) in rows {
        let _ = writeln!(out, "{cat:<width$}  {}", words.join(", "));
    }
    out
}
