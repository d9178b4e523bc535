use rand::Rng as _;

use crate::kg::Triple;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corrupted {
    Head,
    Tail,
}

/// Corruptions of one positive triple. Each negative replaces exactly one of
/// head or tail; relations are never corrupted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeBatch {
    pub positive: Triple,
    pub negatives: Vec<Triple>,
}

impl NegativeBatch {
    pub fn corrupted_side(&self, i: usize) -> Corrupted {
        if self.negatives[i].head != self.positive.head {
            Corrupted::Head
        } else {
            Corrupted::Tail
        }
    }
}

/// Uniform over `0..entity_count` excluding `original`.
#[inline]
fn other_entity(rng: &mut Rng, original: usize, entity_count: usize) -> usize {
    let e = rng.random_range(0..entity_count - 1);
    if e >= original {
        e + 1
    } else {
        e
    }
}

/// Fills `out` with `n` corruptions of `triple`. Needs `entity_count >= 2`.
pub fn sample_negatives_into(
    triple: Triple,
    n: usize,
    entity_count: usize,
    rng: &mut Rng,
    out: &mut Vec<Triple>,
) {
    debug_assert!(entity_count >= 2);
    out.clear();
    for _ in 0..n {
        let mut neg = triple;
        if rng.random::<bool>() {
            neg.head = other_entity(rng, triple.head, entity_count);
        } else {
            neg.tail = other_entity(rng, triple.tail, entity_count);
        }
        out.push(neg);
    }
}

pub fn sample_negatives(
    triple: Triple,
    n: usize,
    entity_count: usize,
    seed: u64,
) -> crate::Result<NegativeBatch> {
    if n == 0 || entity_count < 2 {
        return Err(crate::Error::invalid("need n >= 1 and entity_count >= 2"));
    }
    if triple.head >= entity_count || triple.tail >= entity_count {
        return Err(crate::Error::IndexOutOfRange {
            index: triple.head.max(triple.tail),
            len: entity_count,
        });
    }
    let mut rng = rng::derive(seed, &[]);
    let mut negatives = Vec::with_capacity(n);
    sample_negatives_into(triple, n, entity_count, &mut rng, &mut negatives);
    Ok(NegativeBatch {
        positive: triple,
        negatives,
    })
}
