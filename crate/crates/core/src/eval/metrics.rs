// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fluency and diversity metrics.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::CausalLm;

/// One model call of a sliding-window perplexity run. The window covers
/// tokens `start..end` and scores the tokens `first_scored..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPlan {
    pub start: usize,
    pub end: usize,
    pub first_scored: usize,
}

/// Windows of length `window` advanced by `stride`. The first window scores
/// every token it can predict; each later one scores only the tokens past
/// the previous window's end, so each token from index 1 on is scored once.
pub fn window_plan(len: usize, window: usize, stride: usize) -> Result<Vec<WindowPlan>> {
    if window < 2 {
        return Err(Error::arg("window must be at least 2"));
    }
    if stride == 0 || stride > window {
        return Err(Error::arg(format!("stride must lie in 1..={window}")));
    }
    if len < window {
        return Err(Error::arg(format!(
            "corpus of {len} tokens is shorter than the window {window}"
        )));
    }
    let mut plan = Vec::new();
    let mut prev_end = 0;
    let mut start = 0;
    loop {
        let end = (start + window).min(len);
        plan.push(WindowPlan {
            start,
            end,
            first_scored: prev_end.max(start + 1),
        });
        prev_end = end;
        if end == len {
            break;
        }
        start += stride;
    }
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub value: f64,
    pub mean_nll: f64,
    pub scored_tokens: usize,
}

/// `exp` of the mean negative log-likelihood over a sliding-window pass.
pub fn perplexity<M: CausalLm + ?Sized>(
    model: &M,
    tokens: &[u32],
    window: usize,
    stride: usize,
) -> Result<Perplexity> {
    if window > model.max_seq_len() {
        return Err(Error::arg(format!(
            "window {window} exceeds the model context {}",
            model.max_seq_len()
        )));
    }
    let plan = window_plan(tokens.len(), window, stride)?;
    let mut nll = 0.0f64;
    let mut scored = 0usize;
    for w in &plan {
        let logits = model.position_logits(&tokens[w.start..w.end])?;
        for j in w.first_scored..w.end {
            let row = logits.row(j - w.start - 1);
            let m = row
                .iter()
                .fold(f64::NEG_INFINITY, |a, &v| a.max(f64::from(v)));
            if !m.is_finite() {
                return Err(Error::Numeric("non-finite logits".into()));
            }
            let lse = m + row
                .iter()
                .map(|&v| (f64::from(v) - m).exp())
                .sum::<f64>()
                .ln();
            nll += lse - f64::from(row[tokens[j] as usize]);
            scored += 1;
        }
    }
    let mean_nll = nll / scored as f64;
    Ok(Perplexity {
        value: mean_nll.exp(),
        mean_nll,
        scored_tokens: scored,
    })
}

/// Mean over texts of `|unique n-grams| / |tokens|`. Texts shorter than `n`
/// contribute 0.
pub fn distinct_n<T: Eq + Hash>(texts: &[Vec<T>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::arg("n must be at least 1"));
    }
    if texts.is_empty() {
        return Err(Error::arg("distinct-n of an empty text list"));
    }
    let total: f64 = texts
        .iter()
        .map(|t| {
            if t.len() < n {
                return 0.0;
            }
            let unique: HashSet<&[T]> = t.windows(n).collect();
            unique.len() as f64 / t.len() as f64
        })
        .sum();
    Ok(total / texts.len() as f64)
}

/// Fraction of generations containing at least one lexicon token.
/// An empty list yields 0.
pub fn emission_rate<T: Eq + Hash>(generations: &[Vec<T>], lexicon: &HashSet<T>) -> f64 {
    if generations.is_empty() {
        return 0.0;
    }
    let hits = generations
        .iter()
        .filter(|g| g.iter().any(|t| lexicon.contains(t)))
        .count();
    hits as f64 / generations.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    /// Puts probability `probs[t+1]` on the true next token at each position.
    struct Scripted {
        tokens: Vec<u32>,
        probs: Vec<f64>,
        vocab: usize,
    }

    impl CausalLm for Scripted {
        fn vocab_size(&self) -> usize {
            self.vocab
        }
        fn max_seq_len(&self) -> usize {
            64
        }
        fn position_logits(&self, ids: &[u32]) -> Result<Array2<f32>> {
            let off = self
                .tokens
                .windows(ids.len())
                .position(|w| w == ids)
                .expect("known window");
            let mut out = Array2::<f32>::zeros((ids.len(), self.vocab));
            for t in 0..ids.len() {
                let Some(&next) = self.tokens.get(off + t + 1) else {
                    continue;
                };
                let p = self.probs[off + t + 1];
                let rest = (1.0 - p) / (self.vocab - 1) as f64;
                for v in 0..self.vocab {
                    let q = if v as u32 == next { p } else { rest };
                    out[[t, v]] = q.max(1e-30).ln() as f32;
                }
            }
            Ok(out)
        }
    }

    #[test]
    fn uniform_and_perfect_models() {
        let tokens: Vec<u32> = (0..10).collect();
        let v = 11;
        let uniform = Scripted {
            tokens: tokens.clone(),
            probs: vec![1.0 / v as f64; 10],
            vocab: v,
        };
        let ppl = perplexity(&uniform, &tokens, 4, 2).unwrap();
        assert!((ppl.value - v as f64).abs() < 1e-4);
        assert_eq!(ppl.scored_tokens, 9);
        let perfect = Scripted {
            tokens: tokens.clone(),
            probs: vec![1.0; 10],
            vocab: v,
        };
        assert!((perplexity(&perfect, &tokens, 4, 3).unwrap().value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn two_tokens_hand_value() {
        let tokens = vec![0u32, 1, 2];
        let m = Scripted {
            tokens: tokens.clone(),
            probs: vec![0.0, 0.5, 0.25],
            vocab: 4,
        };
        let ppl = perplexity(&m, &tokens, 3, 3).unwrap();
        assert!((ppl.value - 2.8284271).abs() < 1e-5);
    }

    #[test]
    fn short_corpus_rejected() {
        assert!(window_plan(3, 4, 2).is_err());
        assert!(window_plan(10, 1, 1).is_err());
        assert!(window_plan(10, 4, 5).is_err());
    }

    proptest! {
        #[test]
        fn every_token_scored_once(len in 2usize..80, window in 2usize..20, stride_frac in 0.0f64..1.0) {
            prop_assume!(len >= window);
            let stride = 1 + ((window - 1) as f64 * stride_frac) as usize;
            let plan = window_plan(len, window, stride).unwrap();
            let mut covered = vec![0u32; len];
            for w in &plan {
                prop_assert!(w.end - w.start <= window);
                prop_assert!(w.first_scored > w.start);
                for c in &mut covered[w.first_scored..w.end] {
                    *c += 1;
                }
            }
            prop_assert_eq!(covered[0], 0);
            prop_assert!(covered[1..].iter().all(|&c| c == 1));
        }

        #[test]
        fn distinct_in_unit_interval(texts in proptest::collection::vec(proptest::collection::vec(0u8..6, 0..12), 1..6), n in 1usize..4) {
            let d = distinct_n(&texts, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn duplicating_a_token_never_raises_distinct_1(text in proptest::collection::vec(0u8..6, 2..12), pos in 0usize..12) {
            let mut dup = text.clone();
            let i = 1 + pos % (text.len() - 1);
            dup[i] = dup[i - 1];
            prop_assert!(distinct_n(&[dup], 1).unwrap() <= distinct_n(&[text], 1).unwrap());
        }

        #[test]
        fn union_lexicon_rate_dominates(gens in proptest::collection::vec(proptest::collection::vec(0u8..10, 0..6), 1..10),
                                        a in proptest::collection::hash_set(0u8..10, 1..4),
                                        b in proptest::collection::hash_set(0u8..10, 1..4)) {
            let u: HashSet<u8> = a.union(&b).copied().collect();
            let ru = emission_rate(&gens, &u);
            prop_assert!(ru >= emission_rate(&gens, &a) && ru >= emission_rate(&gens, &b));
        }
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&[vec!['a', 'b', 'a', 'b']], 1).unwrap(), 0.5);
        assert_eq!(distinct_n(&[vec![1, 2, 3, 4]], 1).unwrap(), 1.0);
        assert!((distinct_n(&[vec!['a', 'b', 'c']], 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(distinct_n(&[vec![1], vec![1, 2]], 2).unwrap(), 0.25);
        assert!(distinct_n::<u8>(&[], 1).is_err());
    }

    #[test]
    fn emission_examples() {
        let lex: HashSet<u32> = [7].into();
        let gens: Vec<Vec<u32>> = (0..8)
            .map(|i| if i < 3 { vec![1, 7] } else { vec![1, 2] })
            .collect();
        assert_eq!(emission_rate(&gens, &lex), 0.375);
        assert_eq!(emission_rate(&gens[3..], &lex), 0.0);
        assert_eq!(emission_rate(&gens[..3], &lex), 1.0);
    }
}
