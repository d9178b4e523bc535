use std::collections::HashSet;

use rand::seq::index;

use super::Triple;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// A client's training triples split into the part to be forgotten and the
/// part that is kept. Both halves preserve the input order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForgetSplit {
    pub forget: Vec<Triple>,
    pub remaining: Vec<Triple>,
}

impl ForgetSplit {
    pub fn forget_set(&self) -> HashSet<Triple> {
        self.forget.iter().copied().collect()
    }
}

fn sample_split(
    triples: &[Triple],
    ratio: f64,
    seed: u64,
    tag: u64,
) -> Result<(Vec<Triple>, Vec<Triple>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("ratio {ratio} outside [0, 1]")));
    }
    let n = triples.len();
    let k = ((ratio * n as f64).round() as usize).min(n);
    let mut rng = rng::derive(seed, &[tag]);
    let mut chosen = vec![false; n];
    for i in index::sample(&mut rng, n, k) {
        chosen[i] = true;
    }
    let mut picked = Vec::with_capacity(k);
    let mut rest = Vec::with_capacity(n - k);
    for (t, c) in triples.iter().zip(chosen) {
        if c {
            picked.push(*t);
        } else {
            rest.push(*t);
        }
    }
    Ok((picked, rest))
}

/// Draws `round(ratio * n)` triples uniformly without replacement as the
/// forget set.
pub fn split_forget(triples: &[Triple], ratio: f64, seed: u64) -> Result<ForgetSplit> {
    let (forget, remaining) = sample_split(triples, ratio, seed, stream::FORGET)?;
    Ok(ForgetSplit { forget, remaining })
}

/// Holds out `round(ratio * n)` triples, returning `(kept, held_out)`.
pub fn holdout(triples: &[Triple], ratio: f64, seed: u64) -> Result<(Vec<Triple>, Vec<Triple>)> {
    let (held, kept) = sample_split(triples, ratio, seed, stream::HOLDOUT)?;
    Ok((kept, held))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triples(n: usize) -> Vec<Triple> {
        (0..n).map(|i| Triple::new(i, i % 7, i + 1)).collect()
    }

    #[test]
    fn ratio_zero_forgets_nothing() {
        let ts = triples(50);
        let s = split_forget(&ts, 0.0, 1).unwrap();
        assert!(s.forget.is_empty());
        assert_eq!(s.remaining, ts);
    }

    #[test]
    fn ratio_one_forgets_everything() {
        let ts = triples(50);
        let s = split_forget(&ts, 1.0, 1).unwrap();
        assert_eq!(s.forget, ts);
        assert!(s.remaining.is_empty());
    }

    #[test]
    fn five_percent_of_two_thousand_is_one_hundred() {
        let ts = triples(2000);
        let s = split_forget(&ts, 0.05, 9).unwrap();
        assert_eq!(s.forget.len(), 100);
        assert_eq!(s.remaining.len(), 1900);
        let f = s.forget_set();
        assert!(s.remaining.iter().all(|t| !f.contains(t)));
    }

    #[test]
    fn out_of_range_ratio_is_rejected() {
        assert!(split_forget(&triples(3), 1.5, 0).is_err());
        assert!(split_forget(&triples(3), -0.1, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_disjoint_exhaustive_and_deterministic(n in 0usize..300, ratio in 0.0f64..=1.0, seed: u64) {
            let ts = triples(n);
            let s = split_forget(&ts, ratio, seed).unwrap();
            prop_assert_eq!(s.forget.len(), (ratio * n as f64).round() as usize);
            let mut all: Vec<_> = s.forget.iter().chain(&s.remaining).copied().collect();
            all.sort();
            prop_assert_eq!(&all, &ts);
            prop_assert_eq!(s, split_forget(&ts, ratio, seed).unwrap());
        }
    }
}
