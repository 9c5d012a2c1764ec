// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Criteria 3, 4 and 8 run on desk-scale synthetic worlds (a planted-lexicon
//! corpus, a two-layer model trained on it, and probes trained on its
//! labelled sentences). Criterion 9 drives the `dapi` binary.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dapi_core::data::ClassLabel;
use dapi_core::eval::{distinct_n, perplexity};
use dapi_core::lm::{Model, ModelConfig};
use dapi_core::pipeline::{binary_pairs, DeskSetup};
use dapi_core::probe::{
    cos_reg_loss, cos_reg_loss_and_grad, mean_abs_similarity, train_probes, train_single_probe,
    vocab_top_tokens, ProbeSet, ProbeTrainParams, ProbeTraining,
};
use dapi_core::steering::{
    dynamic_alpha, generate_steered, generate_unsteered, kl_divergence, select_probe, top_p_set,
    union_distributions, weighted_probe, ScalingMode, SelectionMode, SteeringConfig,
};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and thresholds.
const ORACLE_INSTANCES: usize = 1000;
const ORACLE_REL_TOL: f64 = 1e-9;
/// Absolute floor for comparing values that are exactly zero in one route.
const ORACLE_ABS_FLOOR: f64 = 1e-15;
const PPL_REL_TOL: f64 = 1e-6;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const COS_HAND_TOL: f64 = 1e-6;
const FD_INSTANCES: usize = 50;
const FD_REL_TOL: f64 = 1e-3;
/// Entries whose analytic and numeric values are both below this are at
/// finite-difference noise level and compared absolutely.
const FD_ABS_FLOOR: f64 = 1e-8;
const FD_STEP: f64 = 1e-6;
const MIN_SIMILARITY_REDUCTION: f64 = 0.25;
const MAX_ACCURACY_DROP_POINTS: f64 = 3.0;
const REG_BUDGET: Duration = Duration::from_secs(120);
const MIN_EMISSION_REDUCTION: f64 = 0.5;
const CATEGORY_BUDGET: Duration = Duration::from_secs(300);
const SCALING_OFF_FRACTION: f64 = 0.1;
const SATURATION_MIN_COS: f64 = 1.0 - 1e-6;
const GENERATION_TOKENS: usize = 20;
const TOP_K: usize = 10;
const MIN_OWN_TOKENS: usize = 5;
/// Worlds whose cross-lexicon counts are pooled for criterion 8.
const PROJECTION_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const PRIMARY_SEED: u64 = 0;
const SUITE_BUDGET: Duration = Duration::from_secs(600);

const RARE: [ClassLabel; 2] = [ClassLabel::Threat, ClassLabel::IdentityHate];
const MAJORITY: [ClassLabel; 2] = [ClassLabel::Insult, ClassLabel::Obscene];
const SCORED: [ClassLabel; 4] = [
    ClassLabel::Insult,
    ClassLabel::IdentityHate,
    ClassLabel::Obscene,
    ClassLabel::Threat,
];

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + floor
}

// ---------------------------------------------------------------------------
// Shared desk-scale worlds

struct World {
    setup: DeskSetup,
    plain: ProbeTraining,
    regularized: ProbeTraining,
    build_time: Duration,
    probe_time: Duration,
}

impl World {
    fn build(seed: u64) -> dapi_core::Result<World> {
        let t = Instant::now();
        let setup = DeskSetup::build(seed)?;
        let build_time = t.elapsed();
        let t = Instant::now();
        let params = ProbeTrainParams {
            seed,
            ..ProbeTrainParams::default()
        };
        let plain = train_probes(
            &setup.train,
            &setup.val,
            &ProbeTrainParams {
                lambda: 0.0,
                ..params
            },
        )?;
        let regularized = train_probes(&setup.train, &setup.val, &params)?;
        Ok(World {
            setup,
            plain,
            regularized,
            build_time,
            probe_time: t.elapsed(),
        })
    }

    fn lexicon(&self, c: ClassLabel) -> HashSet<u32> {
        self.setup.bundle.lexicons[&c].iter().copied().collect()
    }
}

// ---------------------------------------------------------------------------
// 1. Oracle equivalence

fn oracle_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            s += p[i] * (p[i].ln() - q[i].ln());
        }
    }
    s.max(0.0)
}

/// Exhaustive nucleus: among all index subsets reaching mass `p`, the
/// smallest; then the heaviest; then the lexicographically first.
fn oracle_top_p(probs: &[f64], p: f64) -> Vec<usize> {
    let n = probs.len();
    if p >= 1.0 {
        return (0..n).collect();
    }
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for mask in 1u32..(1 << n) {
        let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mass: f64 = set.iter().map(|&i| probs[i]).sum();
        if mass < p {
            continue;
        }
        let better = match &best {
            None => true,
            Some((size, m, s)) => {
                set.len() < *size || (set.len() == *size && (mass > *m || (mass == *m && set < *s)))
            }
        };
        if better {
            best = Some((set.len(), mass, set));
        }
    }
    best.expect("the full set reaches any p <= 1").2
}

fn oracle_softmax(logits: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn oracle_distinct(texts: &[Vec<u32>], n: usize) -> f64 {
    let mut total = 0.0;
    for t in texts {
        if t.len() < n {
            continue;
        }
        let mut grams = BTreeSet::new();
        for start in 0..=t.len() - n {
            grams.insert(t[start..start + n].to_vec());
        }
        total += grams.len() as f64 / t.len() as f64;
    }
    total / texts.len() as f64
}

/// Sliding-window perplexity written as the usual strided evaluation loop.
fn oracle_perplexity(model: &Model, tokens: &[u32], window: usize, stride: usize) -> f64 {
    let mut nll = 0.0;
    let mut count = 0usize;
    let mut prev_end = 0;
    let mut begin = 0;
    loop {
        let end = (begin + window).min(tokens.len());
        let target_len = end - prev_end;
        let logits = model.logits_all(&tokens[begin..end]).unwrap();
        for pos in (end - target_len).max(begin + 1)..end {
            let row: Vec<f64> = logits
                .row(pos - begin - 1)
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            nll -= row[tokens[pos] as usize] - z.ln();
            count += 1;
        }
        prev_end = end;
        if end == tokens.len() {
            break;
        }
        begin += stride;
    }
    (nll / count as f64).exp()
}

/// Probabilities on a dyadic grid (exact sums, exact ties) or continuous.
fn random_probs(rng: &mut ChaCha8Rng, n: usize, dyadic: bool) -> Vec<f64> {
    if dyadic {
        let mut w = vec![0u32; n];
        for _ in 0..64 {
            w[rng.random_range(0..n)] += 1;
        }
        w.iter().map(|&k| f64::from(k) / 64.0).collect()
    } else {
        let w: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.15) {
                    0.0
                } else {
                    rng.random_range(0.01..1.0)
                }
            })
            .collect();
        let s: f64 = w.iter().sum();
        if s == 0.0 {
            return random_probs(rng, n, true);
        }
        w.iter().map(|v| v / s).collect()
    }
}

fn random_p(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..10) {
        0 => 1.0,
        1 => f64::from(rng.random_range(1..64u32)) / 64.0,
        _ => rng.random_range(0.05..0.99),
    }
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    for i in 0..ORACLE_INSTANCES {
        let n = rng.random_range(2..=12);
        let p = random_probs(&mut rng, n, i % 2 == 0);
        let q: Vec<f64> = {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        };
        let (a, b) = (
            kl_divergence(&p, &q).map_err(|e| e.to_string())?,
            oracle_kl(&p, &q),
        );
        ensure(close(a, b, ORACLE_REL_TOL, ORACLE_ABS_FLOOR), || {
            format!("kl instance {i}: {a} vs {b}")
        })?;
    }

    for i in 0..ORACLE_INSTANCES {
        let n = rng.random_range(1..=10);
        let probs = random_probs(&mut rng, n, i % 2 == 0);
        let p = random_p(&mut rng);
        let got = top_p_set(&probs, p).map_err(|e| e.to_string())?;
        let want = oracle_top_p(&probs, p);
        ensure(got == want, || {
            format!("top_p instance {i}: {got:?} vs {want:?} for {probs:?} at {p}")
        })?;
    }

    for i in 0..ORACLE_INSTANCES {
        let n = rng.random_range(2..=10);
        let lu: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let ls: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let p = random_p(&mut rng);
        let got = union_distributions(
            Array1::from(lu.clone()).view(),
            Array1::from(ls.clone()).view(),
            p,
        )
        .map_err(|e| e.to_string())?;
        let (qf, pf) = (oracle_softmax(&lu), oracle_softmax(&ls));
        let mut support: BTreeSet<usize> = oracle_top_p(&qf, p).into_iter().collect();
        support.extend(oracle_top_p(&pf, p));
        let support: Vec<usize> = support.into_iter().collect();
        ensure(got.support == support, || {
            format!(
                "union instance {i}: support {:?} vs {support:?}",
                got.support
            )
        })?;
        for (full, have) in [(&qf, &got.q), (&pf, &got.p)] {
            let mass: f64 = support.iter().map(|&j| full[j]).sum();
            for (k, &j) in support.iter().enumerate() {
                let want = full[j] / mass;
                ensure(
                    close(have[k], want, ORACLE_REL_TOL, ORACLE_ABS_FLOOR),
                    || format!("union instance {i}: entry {j} {} vs {want}", have[k]),
                )?;
            }
        }
    }

    for i in 0..ORACLE_INSTANCES {
        let texts: Vec<Vec<u32>> = (0..rng.random_range(1..=5))
            .map(|_| {
                (0..rng.random_range(0..=15))
                    .map(|_| rng.random_range(0..4u32))
                    .collect()
            })
            .collect();
        let n = rng.random_range(1..=4);
        let (a, b) = (
            distinct_n(&texts, n).map_err(|e| e.to_string())?,
            oracle_distinct(&texts, n),
        );
        ensure(close(a, b, ORACLE_REL_TOL, ORACLE_ABS_FLOOR), || {
            format!("distinct instance {i}: {a} vs {b}")
        })?;
    }

    let mut models = Vec::new();
    for seed in 0..8u64 {
        let cfg = ModelConfig {
            n_layers: 1 + (seed as usize % 2),
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 6 + seed as usize,
            max_seq_len: 12,
            tied_embeddings: seed % 2 == 0,
        };
        let mut w = Model::init(cfg.clone(), seed).unwrap().into_weights();
        // Larger embeddings give peaked, nontrivial next-token distributions.
        w.tok_embed.mapv_inplace(|v| v * 60.0);
        models.push(Model::new(cfg, w).unwrap());
    }
    for i in 0..ORACLE_INSTANCES {
        let model = &models[i % models.len()];
        let cfg = model.config();
        let window = rng.random_range(2..=cfg.max_seq_len);
        let stride = rng.random_range(1..=window);
        let len = rng.random_range(window..=window * 3);
        let tokens: Vec<u32> = (0..len)
            .map(|_| rng.random_range(0..cfg.vocab_size as u32))
            .collect();
        let got = perplexity(model, &tokens, window, stride)
            .map_err(|e| e.to_string())?
            .value;
        let want = oracle_perplexity(model, &tokens, window, stride);
        ensure(close(got, want, PPL_REL_TOL, 0.0), || {
            format!("perplexity instance {i}: {got} vs {want}")
        })?;
    }

    let elapsed = start.elapsed();
    ensure(elapsed < ORACLE_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "5 x {ORACLE_INSTANCES} instances matched in {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 2. Cosine penalty

fn oracle_cos_loss(w: &Array2<f64>) -> f64 {
    let (n, d) = w.dim();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
            for k in 0..d {
                dot += w[[i, k]] * w[[j, k]];
                ni += w[[i, k]] * w[[i, k]];
                nj += w[[j, k]] * w[[j, k]];
            }
            s += (dot / (ni.sqrt() * nj.sqrt())).abs();
        }
    }
    s
}

fn criterion_2() -> Check {
    let hand = |rows: Vec<f64>, n: usize| {
        cos_reg_loss(
            Array2::from_shape_vec((n, rows.len() / n), rows)
                .unwrap()
                .view(),
        )
    };
    let ortho =
        hand(vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, -3.0], 3).map_err(|e| e.to_string())?;
    let same = hand(vec![0.3, -1.2, 0.3, -1.2], 2).map_err(|e| e.to_string())?;
    let diag = hand(vec![1.0, 0.0, 1.0, 1.0], 2).map_err(|e| e.to_string())?;
    ensure(ortho.abs() <= COS_HAND_TOL, || {
        format!("orthogonal rows gave {ortho}")
    })?;
    ensure((same - 1.0).abs() <= COS_HAND_TOL, || {
        format!("identical rows gave {same}")
    })?;
    ensure(
        (diag - 0.7071).abs() <= 1e-4
            && (diag - std::f64::consts::FRAC_1_SQRT_2).abs() <= COS_HAND_TOL,
        || format!("(1,0),(1,1) gave {diag}"),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for inst in 0..FD_INSTANCES {
        let n = rng.random_range(2..=6);
        let d = rng.random_range(2..=32);
        let w = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let (loss, grad) = cos_reg_loss_and_grad(w.view()).map_err(|e| e.to_string())?;
        let direct = oracle_cos_loss(&w);
        ensure(close(loss, direct, 1e-12, 1e-15), || {
            format!("instance {inst}: loss {loss} vs {direct}")
        })?;
        for i in 0..n {
            for k in 0..d {
                let (mut plus, mut minus) = (w.clone(), w.clone());
                plus[[i, k]] += FD_STEP;
                minus[[i, k]] -= FD_STEP;
                let fd = (oracle_cos_loss(&plus) - oracle_cos_loss(&minus)) / (2.0 * FD_STEP);
                let g = grad[[i, k]];
                let scale = g.abs().max(fd.abs());
                if scale > FD_ABS_FLOOR {
                    worst = worst.max((g - fd).abs() / scale);
                }
                ensure(close(g, fd, FD_REL_TOL, FD_ABS_FLOOR), || {
                    format!(
                        "instance {inst} ({n}x{d}) entry ({i},{k}): analytic {g} vs numeric {fd}"
                    )
                })?;
            }
        }
    }
    Ok(format!(
        "hand values {ortho:.1e}/{same:.6}/{diag:.6}; {FD_INSTANCES} gradient checks, worst relative error {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 3. Regularization effect

fn criterion_3(w: &World) -> Check {
    let (m0, m1) = (
        mean_abs_similarity(&w.plain.probes),
        mean_abs_similarity(&w.regularized.probes),
    );
    let reduction = 1.0 - m1 / m0;
    let drop = 100.0 * (w.plain.val_accuracy - w.regularized.val_accuracy);
    let elapsed = w.build_time + w.probe_time;
    let msg = format!(
        "mean |cos| {m0:.4} -> {m1:.4} ({:.1}% lower), val accuracy {:.2}% -> {:.2}% (drop {drop:.2} points), {:.1}s",
        100.0 * reduction,
        100.0 * w.plain.val_accuracy,
        100.0 * w.regularized.val_accuracy,
        elapsed.as_secs_f64()
    );
    ensure(reduction >= MIN_SIMILARITY_REDUCTION, || msg.clone())?;
    ensure(drop <= MAX_ACCURACY_DROP_POINTS, || msg.clone())?;
    ensure(elapsed < REG_BUDGET, || msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------------------
// 4. Category-wise emission

/// Prompts (by category) whose continuation contains an own-lexicon token.
fn emitting_prompts(
    w: &World,
    mut generate: impl FnMut(&[u32]) -> dapi_core::Result<Vec<u32>>,
) -> dapi_core::Result<BTreeMap<ClassLabel, (usize, usize)>> {
    let mut out: BTreeMap<ClassLabel, (usize, usize)> = BTreeMap::new();
    for p in &w.setup.bundle.prompts {
        let lex = w.lexicon(p.category);
        let ids = generate(&p.tokens)?;
        let e = out.entry(p.category).or_default();
        e.0 += usize::from(ids.iter().any(|t| lex.contains(t)));
        e.1 += 1;
    }
    Ok(out)
}

fn pooled(m: &BTreeMap<ClassLabel, (usize, usize)>, cats: &[ClassLabel]) -> usize {
    cats.iter().map(|c| m.get(c).map_or(0, |v| v.0)).sum()
}

fn criterion_4(w: &World) -> Check {
    let start = Instant::now();
    let model = &w.setup.model;
    let err = |e: dapi_core::Error| e.to_string();
    let base = emitting_prompts(w, |ids| {
        Ok(generate_unsteered(ids, model, GENERATION_TOKENS)?.output_ids)
    })
    .map_err(err)?;
    let multi_cfg = SteeringConfig::default();
    let multi = emitting_prompts(w, |ids| {
        Ok(generate_steered(ids, model, &w.regularized.probes, &multi_cfg)?.output_ids)
    })
    .map_err(err)?;

    let params = ProbeTrainParams {
        lambda: 0.0,
        seed: PRIMARY_SEED,
        ..ProbeTrainParams::default()
    };
    let single = train_single_probe(
        &binary_pairs(&w.setup.train),
        &binary_pairs(&w.setup.val),
        &params,
    )
    .map_err(err)?;
    let single_set = single.to_probe_set(&params).map_err(err)?;
    let single_cfg = SteeringConfig {
        selection_mode: SelectionMode::Single,
        scaling_mode: ScalingMode::Fixed,
        ..SteeringConfig::default()
    };
    let one = emitting_prompts(w, |ids| {
        Ok(generate_steered(ids, model, &single_set, &single_cfg)?.output_ids)
    })
    .map_err(err)?;

    let mut lines = Vec::new();
    let mut multi_ok = true;
    for c in SCORED {
        let (b, n) = base.get(&c).copied().unwrap_or((0, 0));
        let (m, _) = multi.get(&c).copied().unwrap_or((0, 0));
        let (s, _) = one.get(&c).copied().unwrap_or((0, 0));
        let red = |x: usize| {
            if b == 0 {
                f64::NAN
            } else {
                1.0 - x as f64 / b as f64
            }
        };
        multi_ok &= b > 0 && red(m) >= MIN_EMISSION_REDUCTION;
        lines.push(format!(
            "{}: {b}/{n} unsteered, multi {m} ({:.0}%), single {s} ({:.0}%)",
            c.as_str(),
            100.0 * red(m),
            100.0 * red(s)
        ));
    }
    let red = |x: usize, b: usize| {
        if b == 0 {
            f64::NAN
        } else {
            1.0 - x as f64 / b as f64
        }
    };
    let rare = red(pooled(&one, &RARE), pooled(&base, &RARE));
    let majority = red(pooled(&one, &MAJORITY), pooled(&base, &MAJORITY));
    let elapsed = w.build_time + w.probe_time + start.elapsed();
    let msg = format!(
        "{}; single-probe reduction rare {:.0}% vs majority {:.0}%; {:.1}s",
        lines.join("; "),
        100.0 * rare,
        100.0 * majority,
        elapsed.as_secs_f64()
    );
    ensure(multi_ok, || format!("(a) failed: {msg}"))?;
    ensure(rare < majority, || format!("(b) failed: {msg}"))?;
    ensure(elapsed < CATEGORY_BUDGET, || msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------------------
// 5. Dynamic-scaling invariants

/// A model whose residual stream, layer-norm outputs and embeddings live in
/// the first `active` dimensions; the remaining ones are exactly zero.
fn subspace_model(active: usize, seed: u64) -> Model {
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size: 14,
        max_seq_len: 32,
        tied_embeddings: true,
    };
    let mut w = Model::init(cfg.clone(), seed).unwrap().into_weights();
    w.tok_embed.mapv_inplace(|v| v * 60.0);
    let cut_cols = |a: &mut Array2<f32>| {
        a.columns_mut()
            .into_iter()
            .skip(active)
            .for_each(|mut c| c.fill(0.0))
    };
    let cut_vec = |a: &mut Array1<f32>| a.iter_mut().skip(active).for_each(|v| *v = 0.0);
    cut_cols(&mut w.tok_embed);
    cut_cols(&mut w.pos_embed);
    for l in &mut w.layers {
        for v in [&mut l.ln1_g, &mut l.ln1_b, &mut l.ln2_g, &mut l.ln2_b] {
            cut_vec(v);
        }
        cut_cols(&mut l.wo);
        cut_cols(&mut l.w2);
    }
    cut_vec(&mut w.lnf_g);
    cut_vec(&mut w.lnf_b);
    Model::new(cfg, w).unwrap()
}

/// Probe rows supported only on the inactive dimensions.
fn inactive_probes(active: usize, d: usize, rng: &mut ChaCha8Rng) -> ProbeSet {
    let rows = Array2::from_shape_fn((5, d), |(_, j)| {
        if j < active {
            0.0
        } else {
            rng.random_range(-1.0f32..1.0)
        }
    });
    ProbeSet::new(
        rows,
        ClassLabel::TOXIC
            .iter()
            .map(|c| c.as_str().to_string())
            .collect(),
    )
    .unwrap()
}

fn criterion_5() -> Check {
    let err = |e: dapi_core::Error| e.to_string();
    let cfg = SteeringConfig::default();
    for amin in [cfg.alpha_min, 1.5] {
        let c = SteeringConfig {
            alpha_min: amin,
            ..cfg
        };
        ensure(c.alpha_from_kl(0.0) == amin, || {
            format!("alpha(0) = {} for alpha_min {amin}", c.alpha_from_kl(0.0))
        })?;
    }
    let grid: Vec<f64> = (0..=2000).map(|i| f64::from(i) * 0.002).collect();
    for pair in grid.windows(2) {
        let (a, b) = (cfg.alpha_from_kl(pair[0]), cfg.alpha_from_kl(pair[1]));
        ensure(b > a, || {
            format!(
                "alpha not increasing between kl {} and {}: {a} vs {b}",
                pair[0], pair[1]
            )
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let active = 8;
    let mut max_alpha: f64 = 0.0;
    let mut compared = 0usize;
    for seed in 0..4u64 {
        let model = subspace_model(active, seed);
        let probes = inactive_probes(active, 16, &mut rng);
        let unit = probes.unit_vectors();
        for _ in 0..5 {
            let prompt: Vec<u32> = (0..rng.random_range(2..=8))
                .map(|_| rng.random_range(0..14u32))
                .collect();
            let hooks = model.forward_with_hooks(&prompt, 2).map_err(err)?;
            for row in unit.outer_iter() {
                let (alpha, kl) =
                    dynamic_alpha(hooks.final_hidden_last_token.view(), row, &model, &cfg)
                        .map_err(err)?;
                ensure(kl == 0.0, || {
                    format!("coinciding distributions gave kl {kl}")
                })?;
                max_alpha = max_alpha.max(alpha);
            }
            let plain = generate_unsteered(&prompt, &model, GENERATION_TOKENS).map_err(err)?;
            for scaling in [ScalingMode::Dynamic, ScalingMode::Fixed] {
                for use_negative_cos in [false, true] {
                    let c = SteeringConfig {
                        scaling_mode: scaling,
                        use_negative_cos,
                        ..cfg
                    };
                    let steered = generate_steered(&prompt, &model, &probes, &c).map_err(err)?;
                    ensure(steered.output_ids == plain.output_ids, || {
                        format!(
                            "tokens differ under {scaling:?}: {:?} vs {:?}",
                            steered.output_ids, plain.output_ids
                        )
                    })?;
                    for d in &steered.decisions {
                        ensure(d.similarities.iter().all(|&s| s == 0.0), || {
                            "probe not orthogonal to activations".into()
                        })?;
                        if scaling == ScalingMode::Dynamic {
                            max_alpha = max_alpha.max(d.alpha_applied);
                        }
                    }
                    compared += 1;
                }
            }
        }
    }
    let bound = SCALING_OFF_FRACTION * cfg.alpha_fixed;
    ensure(max_alpha <= bound, || {
        format!("applied alpha {max_alpha} exceeds {bound}")
    })?;
    Ok(format!(
        "alpha(0) = alpha_min, increasing on 2001-point grid, max applied alpha {max_alpha} <= {bound:.2}, {compared} orthogonal-probe generations token-identical"
    ))
}

// ---------------------------------------------------------------------------
// 6. Selection invariants

fn random_model(seed: u64) -> Model {
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 4,
        d_ff: 32,
        vocab_size: 20,
        max_seq_len: 32,
        tied_embeddings: false,
    };
    let mut w = Model::init(cfg.clone(), seed).unwrap().into_weights();
    w.tok_embed.mapv_inplace(|v| v * 60.0);
    Model::new(cfg, w).unwrap()
}

fn category_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn criterion_6() -> Check {
    let err = |e: dapi_core::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let cfg = SteeringConfig::default();
    let probes = ProbeSet::new(
        Array2::from_shape_fn((5, 16), |_| rng.random_range(-1.0f32..1.0)),
        category_names(5),
    )
    .map_err(err)?;
    for i in 0..100 {
        let x = Array1::from_shape_fn(16, |_| rng.random_range(-1.0f32..1.0));
        let reference = select_probe(&probes, x.view(), &cfg).map_err(err)?.selected;
        for c in [1e-3f32, 1.0, 1e3] {
            let got = select_probe(&probes, (&x * c).view(), &cfg)
                .map_err(err)?
                .selected;
            ensure(got == reference, || {
                format!("x {i} scaled by {c}: {got:?} vs {reference:?}")
            })?;
        }
    }

    let mut negative_steps = 0;
    for seed in 0..20u64 {
        let model = random_model(seed);
        let prompt: Vec<u32> = (0..rng.random_range(2..=10))
            .map(|_| rng.random_range(0..20u32))
            .collect();
        let hooks = model.forward_with_hooks(&prompt, 2).map_err(err)?;
        let x_avg = hooks
            .pre_ffn_hidden
            .mapv(f64::from)
            .mean_axis(Axis(0))
            .unwrap();
        let norm = x_avg.dot(&x_avg).sqrt();
        let rows = Array2::from_shape_fn((4, 16), |(_, j)| {
            (-x_avg[j] + 0.1 * norm * rng.random_range(-0.25..0.25)) as f32
        });
        let neg = ProbeSet::new(rows, category_names(4)).map_err(err)?;
        let plain = generate_unsteered(&prompt, &model, 1).map_err(err)?;
        for scaling in [ScalingMode::Dynamic, ScalingMode::Fixed] {
            let c = SteeringConfig {
                scaling_mode: scaling,
                max_new_tokens: 1,
                ..cfg
            };
            let r = generate_steered(&prompt, &model, &neg, &c).map_err(err)?;
            let d = &r.decisions[0];
            ensure(d.similarities.iter().all(|&s| s < 0.0), || {
                format!("similarities not negative: {:?}", d.similarities)
            })?;
            ensure(d.selected.is_none(), || {
                format!("selected {:?} with all-negative similarities", d.selected)
            })?;
            ensure(r.output_ids == plain.output_ids, || {
                "step output differs from unsteered greedy token".into()
            })?;
            negative_steps += 1;
        }
    }

    let mut worst: f64 = 1.0;
    for _ in 0..50 {
        let set = ProbeSet::new(
            Array2::from_shape_fn((5, 16), |_| rng.random_range(-1.0f32..1.0)),
            category_names(5),
        )
        .map_err(err)?;
        let top = rng.random_range(0..5);
        for gap in [20.0, 50.0, 200.0] {
            let sims: Vec<f64> = (0..5)
                .map(|i| if i == top { 1.0 } else { 1.0 - gap })
                .collect();
            let v = weighted_probe(&set, &sims).map_err(err)?;
            let u = set.unit_vectors();
            let cos = v.dot(&u.row(top)) / v.dot(&v).sqrt();
            worst = worst.min(cos);
            ensure(cos >= SATURATION_MIN_COS, || {
                format!("gap {gap}: cos {cos}")
            })?;
        }
    }
    Ok(format!(
        "300 scaled selections stable, {negative_steps} all-negative steps unsteered, saturation cos >= {worst:.12}"
    ))
}

// ---------------------------------------------------------------------------
// 7. One forward pass per token

fn criterion_7(w: &World) -> Check {
    let err = |e: dapi_core::Error| e.to_string();
    let model = w.setup.model.clone();
    let mut runs = 0;
    for p in w.setup.bundle.prompts.iter().take(12) {
        for scaling in [ScalingMode::Fixed, ScalingMode::Dynamic] {
            for selection in [SelectionMode::Argmax, SelectionMode::WeightedSum] {
                for use_negative_cos in [false, true] {
                    let c = SteeringConfig {
                        scaling_mode: scaling,
                        selection_mode: selection,
                        use_negative_cos,
                        max_new_tokens: GENERATION_TOKENS,
                        ..SteeringConfig::default()
                    };
                    let before = model.forward_pass_count();
                    let r = generate_steered(&p.tokens, &model, &w.regularized.probes, &c)
                        .map_err(err)?;
                    let passes = model.forward_pass_count() - before;
                    ensure(
                        passes == r.output_ids.len() as u64
                            && r.forward_pass_count == passes
                            && r.output_ids.len() == GENERATION_TOKENS,
                        || {
                            format!(
                                "{scaling:?}/{selection:?}: {passes} passes for {} tokens",
                                r.output_ids.len()
                            )
                        },
                    )?;
                    runs += 1;
                }
            }
        }
    }
    Ok(format!(
        "{runs} generations of {GENERATION_TOKENS} tokens, one forward pass per token"
    ))
}

// ---------------------------------------------------------------------------
// 8. Vocabulary projection

/// Minimum own-lexicon count over categories and the total cross-lexicon count.
fn projection_counts(w: &World, probes: &ProbeSet) -> dapi_core::Result<(usize, usize)> {
    let all: HashSet<u32> = w
        .setup
        .bundle
        .lexicons
        .values()
        .flatten()
        .copied()
        .collect();
    let mut min_own = usize::MAX;
    let mut cross = 0;
    for (i, name) in probes.categories().iter().enumerate() {
        let c: ClassLabel = name.parse()?;
        let own = w.lexicon(c);
        let top = vocab_top_tokens(probes.vector(i), &w.setup.model, TOP_K)?;
        min_own = min_own.min(top.iter().filter(|(id, _)| own.contains(id)).count());
        cross += top
            .iter()
            .filter(|(id, _)| all.contains(id) && !own.contains(id))
            .count();
    }
    Ok((min_own, cross))
}

fn criterion_8(primary: &World) -> Check {
    let mut total = (0, 0);
    let mut worst_own = usize::MAX;
    let mut per_seed = Vec::new();
    for seed in PROJECTION_SEEDS {
        let built;
        let w = if seed == PRIMARY_SEED {
            primary
        } else {
            built = World::build(seed).map_err(|e| e.to_string())?;
            &built
        };
        let (_, x0) = projection_counts(w, &w.plain.probes).map_err(|e| e.to_string())?;
        let (own, x1) = projection_counts(w, &w.regularized.probes).map_err(|e| e.to_string())?;
        worst_own = worst_own.min(own);
        total.0 += x0;
        total.1 += x1;
        per_seed.push(format!("seed {seed}: own>={own} cross {x0}->{x1}"));
    }
    let msg = format!(
        "{}; min own {worst_own}/{TOP_K}, pooled cross-lexicon tokens {} -> {}",
        per_seed.join(", "),
        total.0,
        total.1
    );
    ensure(worst_own >= MIN_OWN_TOKENS, || msg.clone())?;
    ensure(total.1 < total.0, || msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------------------
// 9. CLI determinism and replay

fn dapi(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dapi"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn criterion_9() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let file = |d: &str, f: &str| Path::new(&p(d)).join(f).to_string_lossy().into_owned();
    dapi(&["synth", "--out", &p("data")])?;
    dapi(&["train-lm", "--data", &p("data"), "--out", &p("lm")])?;
    dapi(&[
        "train-probes",
        "--data",
        &p("data"),
        "--model",
        &p("lm"),
        "--out",
        &p("probes"),
        "--baseline",
    ])?;
    let probes = file("probes", "probes.json");
    dapi(&[
        "analyze",
        "--model",
        &p("lm"),
        "--probes",
        &probes,
        "--compare",
        &file("probes", "probes_lambda0.json"),
        "--data",
        &p("data"),
        "--out",
        &p("analyze"),
    ])?;
    dapi(&[
        "generate",
        "--model",
        &p("lm"),
        "--probes",
        &probes,
        "--data",
        &p("data"),
        "--out",
        &p("generate"),
    ])?;
    dapi(&[
        "eval",
        "--model",
        &p("lm"),
        "--probes",
        &probes,
        "--single",
        &file("probes", "single_probe.json"),
        "--data",
        &p("data"),
        "--stub-scorer",
        "--workers",
        "2",
        "--out",
        &p("eval"),
    ])?;
    let commands = ["data", "lm", "probes", "analyze", "generate", "eval"];
    let mut files = 0;
    for c in commands {
        let out = dapi(&["replay", &file(c, "manifest.json")])?;
        let verdict: serde_json::Value =
            serde_json::from_str(out.lines().last().unwrap_or("{}")).map_err(|e| e.to_string())?;
        ensure(verdict["identical"] == true, || {
            format!("{c} replay differs: {verdict}")
        })?;
        files += verdict["files"].as_u64().unwrap_or(0);
    }
    Ok(format!(
        "{} commands replayed from their manifests, {files} output files bitwise identical, {:.1}s",
        commands.len(),
        start.elapsed().as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

fn report(id: u8, name: &str, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    match &result {
        Ok(msg) => println!("PASS [{id}] {name} ({secs:.1}s): {msg}"),
        Err(msg) => println!("FAIL [{id}] {name} ({secs:.1}s): {msg}"),
    }
    result.is_ok()
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut ok = true;
    ok &= report(1, "oracle equivalence", criterion_1);
    ok &= report(2, "cosine penalty values and gradient", criterion_2);
    ok &= report(5, "dynamic-scaling invariants", criterion_5);
    ok &= report(6, "selection invariants", criterion_6);

    let primary = World::build(PRIMARY_SEED);
    match &primary {
        Ok(w) => {
            ok &= report(3, "regularization effect", || criterion_3(w));
            ok &= report(4, "category-wise emission", || criterion_4(w));
            ok &= report(7, "single forward pass per token", || criterion_7(w));
            ok &= report(8, "vocabulary projection", || criterion_8(w));
        }
        Err(e) => {
            for (id, name) in [
                (3, "regularization effect"),
                (4, "category-wise emission"),
                (7, "single forward pass per token"),
                (8, "vocabulary projection"),
            ] {
                println!("FAIL [{id}] {name}: desk world failed to build: {e}");
            }
            ok = false;
        }
    }
    drop(primary);

    ok &= report(9, "CLI replay and suite runtime", || {
        let msg = criterion_9()?;
        let total = start.elapsed();
        ensure(total < SUITE_BUDGET, || {
            format!("{msg}; suite took {total:?}")
        })?;
        Ok(format!("{msg}; whole suite {:.1}s", total.as_secs_f64()))
    });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
