//! Link-prediction ranking, MRR / Hits@n, and report tables.

mod report;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::embedding::{EmbeddingTable, Norm, Scorer};
use crate::error::{Error, Result};
use crate::kg::Triple;
use crate::pipeline::ModelSnapshot;

pub use report::{emit_report, read_report_csv, sort_rows, ReportRow, CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankRecord {
    pub triple: Triple,
    pub direction: Direction,
    /// 1-based; ties contribute half a place each.
    pub rank: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Local,
    Global,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Local => "local",
            Scope::Global => "global",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Scope::Local),
            "global" => Ok(Scope::Global),
            _ => Err(Error::invalid(format!("unknown scope {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Forget,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Forget => "forget",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forget" => Ok(Split::Forget),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

/// Rank of `triple` among all corruptions of one slot. Candidates found in
/// `filter` (other than the triple itself) are skipped; pass `None` for the
/// raw setting.
pub fn rank_triple(
    table: &EmbeddingTable,
    norm: Norm,
    triple: Triple,
    direction: Direction,
    filter: Option<&HashSet<Triple>>,
) -> Result<f64> {
    let n = table.entity_count();
    for (index, len) in [
        (triple.head, n),
        (triple.tail, n),
        (triple.relation, table.relation_count()),
    ] {
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
    }
    let scorer = Scorer::new(table.kind, norm);
    let r = table.relations.row(triple.relation);
    let score =
        |c: &Triple| scorer.score(table.entities.row(c.head), r, table.entities.row(c.tail));
    let target = score(&triple);
    let (mut higher, mut equal) = (0usize, 0usize);
    for e in 0..n {
        let cand = match direction {
            Direction::Head => Triple::new(e, triple.relation, triple.tail),
            Direction::Tail => Triple::new(triple.head, triple.relation, e),
        };
        if cand == triple || filter.is_some_and(|f| f.contains(&cand)) {
            continue;
        }
        let s = score(&cand);
        if s > target {
            higher += 1;
        } else if s == target {
            equal += 1;
        }
    }
    Ok(1.0 + higher as f64 + equal as f64 / 2.0)
}

pub fn hits_at_n(ranks: &[f64], n: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::invalid("hits@n of an empty rank list"));
    }
    if n == 0 {
        return Err(Error::invalid("hits@n needs n >= 1"));
    }
    let hit = ranks.iter().filter(|&&r| r <= n as f64).count();
    Ok(hit as f64 / ranks.len() as f64)
}

pub fn mrr(ranks: &[f64]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::invalid("MRR of an empty rank list"));
    }
    Ok(ranks.iter().map(|r| 1.0 / r).sum::<f64>() / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[f64]) -> Result<Self> {
        Ok(Self {
            mrr: mrr(ranks)?,
            hits1: hits_at_n(ranks, 1)?,
            hits3: hits_at_n(ranks, 3)?,
            hits10: hits_at_n(ranks, 10)?,
            count: ranks.len(),
        })
    }
}

/// Head and tail ranks for every triple of `split`, each scored with the
/// table of the client owning its relation. Local scope uses the client's
/// own entity rows (server rows for entities it never saw); global scope
/// uses the server rows. Both borrow the client's relation rows.
pub fn rank_records(
    snapshot: &ModelSnapshot,
    split: &[Triple],
    scope: Scope,
    filter: Option<&HashSet<Triple>>,
    norm: Norm,
) -> Result<Vec<RankRecord>> {
    let tables = snapshot.scope_tables(scope)?;
    let owner = snapshot.relation_owner()?;
    let per_triple = split
        .par_iter()
        .map(|&t| {
            let table =
                owner
                    .get(t.relation)
                    .map(|&c| &tables[c])
                    .ok_or(Error::IndexOutOfRange {
                        index: t.relation,
                        len: owner.len(),
                    })?;
            [Direction::Head, Direction::Tail]
                .into_iter()
                .map(|direction| {
                    let rank = rank_triple(table, norm, t, direction, filter)?;
                    Ok(RankRecord {
                        triple: t,
                        direction,
                        rank,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_triple.into_iter().flatten().collect())
}

pub fn evaluate(
    snapshot: &ModelSnapshot,
    split: &[Triple],
    scope: Scope,
    filter: Option<&HashSet<Triple>>,
    norm: Norm,
) -> Result<Metrics> {
    if split.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let ranks: Vec<f64> = rank_records(snapshot, split, scope, filter, norm)?
        .iter()
        .map(|r| r.rank)
        .collect();
    Metrics::from_ranks(&ranks)
}
