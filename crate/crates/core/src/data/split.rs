// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Deterministic stratified train/validation split.
///
/// The train side receives `round(ratio · n)` records overall. Every class
/// with at least two members keeps at least one record on each side;
/// singleton classes go to train. Per-class quotas are allocated by largest
/// remainder so the total hits its target whenever the class constraints
/// allow it.
pub fn split<T: Clone, K: Ord>(
    records: &[T],
    ratio: f64,
    seed: u64,
    key: impl Fn(&T) -> K,
) -> Result<(Vec<T>, Vec<T>)> {
    if records.is_empty() {
        return Err(Error::arg("cannot split an empty record list"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::arg(format!(
            "split ratio {ratio} must lie strictly between 0 and 1"
        )));
    }
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(key(r)).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();

    struct Quota {
        ideal: f64,
        take: usize,
        lo: usize,
        hi: usize,
    }
    let mut quotas: Vec<Quota> = groups
        .iter()
        .map(|g| {
            let n = g.len();
            let (lo, hi) = if n >= 2 { (1, n - 1) } else { (n, n) };
            let ideal = ratio * n as f64;
            Quota {
                ideal,
                take: (ideal.floor() as usize).clamp(lo, hi),
                lo,
                hi,
            }
        })
        .collect();
    let target = (ratio * records.len() as f64).round() as i64;
    loop {
        let current: i64 = quotas.iter().map(|q| q.take as i64).sum();
        if current == target {
            break;
        }
        let grow = current < target;
        let pick = quotas
            .iter()
            .enumerate()
            .filter(|(_, q)| if grow { q.take < q.hi } else { q.take > q.lo })
            .max_by(|(ia, a), (ib, b)| {
                let (ra, rb) = (a.ideal - a.take as f64, b.ideal - b.take as f64);
                let ord = if grow {
                    ra.total_cmp(&rb)
                } else {
                    rb.total_cmp(&ra)
                };
                // Prefer the earlier class on equal remainders.
                ord.then(ib.cmp(ia))
            })
            .map(|(i, _)| i);
        match pick {
            Some(i) if grow => quotas[i].take += 1,
            Some(i) => quotas[i].take -= 1,
            None => break,
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (mut g, q) in groups.into_iter().zip(&quotas) {
        g.shuffle(&mut rng);
        train.extend_from_slice(&g[..q.take]);
        val.extend_from_slice(&g[q.take..]);
    }
    train.shuffle(&mut rng);
    val.shuffle(&mut rng);
    Ok((
        train.into_iter().map(|i| records[i].clone()).collect(),
        val.into_iter().map(|i| records[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ninety_ten_sizes() {
        let recs: Vec<u32> = (0..100).collect();
        let (tr, va) = split(&recs, 0.9, 1, |r| r % 3).unwrap();
        assert_eq!((tr.len(), va.len()), (90, 10));
    }

    #[test]
    fn same_seed_same_partition() {
        let recs: Vec<u32> = (0..57).collect();
        let a = split(&recs, 0.8, 7, |r| r % 4).unwrap();
        let b = split(&recs, 0.8, 7, |r| r % 4).unwrap();
        assert_eq!(a, b);
        let c = split(&recs, 0.8, 8, |r| r % 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn two_member_class_goes_one_each_side() {
        let mut recs: Vec<(u32, char)> = (0..30).map(|i| (i, 'a')).collect();
        recs.push((100, 'b'));
        recs.push((101, 'b'));
        let (tr, va) = split(&recs, 0.9, 3, |r| r.1).unwrap();
        assert_eq!(tr.iter().filter(|r| r.1 == 'b').count(), 1);
        assert_eq!(va.iter().filter(|r| r.1 == 'b').count(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(split::<u32, u32>(&[], 0.9, 0, |r| *r).is_err());
        assert!(split(&[1u32, 2], 1.0, 0, |r| *r).is_err());
        assert!(split(&[1u32, 2], 0.0, 0, |r| *r).is_err());
    }

    proptest! {
        #[test]
        fn preserves_multiset(labels in proptest::collection::vec(0u8..5, 1..200), ratio in 0.05f64..0.95, seed in any::<u64>()) {
            let recs: Vec<(usize, u8)> = labels.iter().copied().enumerate().collect();
            let (tr, va) = split(&recs, ratio, seed, |r| r.1).unwrap();
            let mut all: Vec<_> = tr.iter().chain(va.iter()).copied().collect();
            all.sort();
            prop_assert_eq!(all, recs.clone());
            for class in 0u8..5 {
                let n = recs.iter().filter(|r| r.1 == class).count();
                if n >= 2 {
                    prop_assert!(tr.iter().any(|r| r.1 == class));
                    prop_assert!(va.iter().any(|r| r.1 == class));
                }
            }
        }
    }
}
