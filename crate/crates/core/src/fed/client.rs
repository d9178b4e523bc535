use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::losses::{mutual_distill, ns_loss, ns_loss_grad, DistillScratch};
use super::{ServerState, TrainConfig};
use crate::embedding::{sample_negatives_into, EmbeddingTable, Scorer};
use crate::error::{Error, Result};
use crate::kg::Triple;
use crate::matrix::Matrix;
use crate::rng::Rng;

/// One simulated client.
///
/// `table.entities` holds only the rows of entities the client knows about;
/// `index_map[i]` is the global id of local row `i`. `global_rows` is the
/// client's working copy of the server rows for the same entities, used for
/// the global-side scores during distillation.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub relations: Vec<usize>,
    pub index_map: Vec<usize>,
    pub table: EmbeddingTable,
    pub global_rows: Matrix,
    /// Training triples in global ids.
    train: Vec<Triple>,
    /// Same triples with head/tail rewritten to local rows.
    local_train: Vec<Triple>,
    global_to_local: HashMap<usize, usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub ns_loss: f64,
    pub distill_loss: f64,
}

impl ClientState {
    /// Builds a client over `train`, mapping every entity that appears in it
    /// (plus `extra_entities`) to a local row, with rows and relation vectors
    /// copied from `init`.
    pub fn new(
        id: usize,
        relations: Vec<usize>,
        train: Vec<Triple>,
        extra_entities: &[usize],
        init: &EmbeddingTable,
    ) -> Result<Self> {
        let mut index_map: Vec<usize> = train
            .iter()
            .flat_map(|t| [t.head, t.tail])
            .chain(extra_entities.iter().copied())
            .collect();
        index_map.sort_unstable();
        index_map.dedup();
        let dim = init.dim();
        let mut entities = Matrix::zeros(index_map.len(), dim);
        for (i, &g) in index_map.iter().enumerate() {
            if g >= init.entity_count() {
                return Err(Error::IndexOutOfRange {
                    index: g,
                    len: init.entity_count(),
                });
            }
            entities.row_mut(i).copy_from_slice(init.entities.row(g));
        }
        let table = EmbeddingTable::new(init.kind, entities, init.relations.clone())?;
        Self::from_parts(id, relations, train, index_map, table)
    }

    /// Reassembles a client from stored parts.
    pub fn from_parts(
        id: usize,
        relations: Vec<usize>,
        train: Vec<Triple>,
        index_map: Vec<usize>,
        table: EmbeddingTable,
    ) -> Result<Self> {
        if index_map.len() != table.entity_count() {
            return Err(Error::DimensionMismatch {
                expected: table.entity_count(),
                actual: index_map.len(),
            });
        }
        let global_to_local: HashMap<usize, usize> =
            index_map.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        if global_to_local.len() != index_map.len() {
            return Err(Error::invalid(format!(
                "client {id}: index map is not injective"
            )));
        }
        let local_train = train
            .iter()
            .map(|t| {
                let lookup = |e: usize| {
                    global_to_local.get(&e).copied().ok_or_else(|| {
                        Error::invalid(format!("client {id}: entity {e} has no local row"))
                    })
                };
                if t.relation >= table.relation_count() {
                    return Err(Error::IndexOutOfRange {
                        index: t.relation,
                        len: table.relation_count(),
                    });
                }
                Ok(Triple::new(lookup(t.head)?, t.relation, lookup(t.tail)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let global_rows = table.entities.clone();
        Ok(Self {
            id,
            relations,
            index_map,
            table,
            global_rows,
            train,
            local_train,
            global_to_local,
        })
    }

    pub fn train_triples(&self) -> &[Triple] {
        &self.train
    }

    pub fn local_row(&self, global: usize) -> Option<usize> {
        self.global_to_local.get(&global).copied()
    }

    /// Copies server rows into both the local table and the global working
    /// copy (`E_l[i] ← E_g[map(i)]`).
    pub fn distribute(&mut self, server: &ServerState) -> Result<()> {
        let n = server.entities.rows();
        if let Some(&bad) = self.index_map.iter().find(|&&g| g >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        for (i, &g) in self.index_map.iter().enumerate() {
            self.table
                .entities
                .row_mut(i)
                .copy_from_slice(server.entities.row(g));
            self.global_rows
                .row_mut(i)
                .copy_from_slice(server.entities.row(g));
        }
        Ok(())
    }

    /// Full-size entity matrix as this client sees it: local rows where
    /// mapped, server rows elsewhere.
    pub fn entity_view(&self, server: &Matrix) -> Matrix {
        let mut view = server.clone();
        for (i, &g) in self.index_map.iter().enumerate() {
            view.row_mut(g).copy_from_slice(self.table.entities.row(i));
        }
        view
    }

    /// One pass over the training triples in shuffled mini-batches.
    pub fn local_epoch(&mut self, config: &TrainConfig, rng: &mut Rng) -> EpochStats {
        let n_local = self.table.entity_count();
        if self.local_train.is_empty() || n_local < 2 {
            return EpochStats::default();
        }
        let scorer = Scorer::new(self.table.kind, config.norm);
        let dim = self.table.dim();
        let distill = config.distill_weight > 0.0;
        let n_neg = config.negatives;
        let cands = n_neg + 1;

        let mut order = self.local_train.clone();
        order.shuffle(rng);

        let mut grad_local = Matrix::zeros(n_local, dim);
        let mut grad_global = Matrix::zeros(n_local, dim);
        let mut grad_rel = Matrix::zeros(self.table.relation_count(), dim);
        let mut touched_ent: Vec<usize> = Vec::new();
        let mut touched_rel: Vec<usize> = Vec::new();

        let mut negatives = Vec::with_capacity(n_neg);
        let mut candidates: Vec<Triple> = Vec::with_capacity(cands);
        let mut s_local = vec![0.0; cands];
        let mut s_global = vec![0.0; cands];
        let mut c_local = vec![0.0; cands];
        let mut c_global = vec![0.0; cands];
        let mut d_local = vec![0.0; cands];
        let mut d_global = vec![0.0; cands];
        let mut scratch = DistillScratch::default();
        let (mut gh, mut gr, mut gt) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);

        let mut stats = EpochStats::default();
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let inv_b = 1.0 / batch.len() as f64;
            let mut batch_ns = 0.0;
            let mut batch_kd = 0.0;
            for &pos in batch {
                sample_negatives_into(pos, n_neg, n_local, rng, &mut negatives);
                candidates.clear();
                candidates.push(pos);
                candidates.extend_from_slice(&negatives);

                let ent = &self.table.entities;
                let rel = &self.table.relations;
                for (s, t) in s_local.iter_mut().zip(&candidates) {
                    *s = scorer.score(ent.row(t.head), rel.row(t.relation), ent.row(t.tail));
                }
                batch_ns += ns_loss(s_local[0], &s_local[1..], config.margin);
                ns_loss_grad(s_local[0], &s_local[1..], config.margin, &mut c_local);

                if distill {
                    let glob = &self.global_rows;
                    for (s, t) in s_global.iter_mut().zip(&candidates) {
                        *s = scorer.score(glob.row(t.head), rel.row(t.relation), glob.row(t.tail));
                    }
                    batch_kd += mutual_distill(
                        &s_local,
                        &s_global,
                        &mut scratch,
                        &mut d_local,
                        &mut d_global,
                    );
                    for i in 0..cands {
                        c_local[i] += config.distill_weight * d_local[i];
                        c_global[i] = config.distill_weight * d_global[i];
                    }
                }

                for (i, t) in candidates.iter().enumerate() {
                    let sides: &[(bool, f64)] = if distill {
                        &[(true, c_local[i]), (false, c_global[i])]
                    } else {
                        &[(true, c_local[i])]
                    };
                    for &(is_local, coeff) in sides {
                        if coeff == 0.0 {
                            continue;
                        }
                        let src = if is_local {
                            &self.table.entities
                        } else {
                            &self.global_rows
                        };
                        gh.fill(0.0);
                        gr.fill(0.0);
                        gt.fill(0.0);
                        scorer.accumulate_grad(
                            (src.row(t.head), rel.row(t.relation), src.row(t.tail)),
                            coeff * inv_b,
                            &mut gh,
                            &mut gr,
                            &mut gt,
                        );
                        let dst = if is_local {
                            &mut grad_local
                        } else {
                            &mut grad_global
                        };
                        add_into(dst.row_mut(t.head), &gh);
                        add_into(dst.row_mut(t.tail), &gt);
                        add_into(grad_rel.row_mut(t.relation), &gr);
                        touched_ent.push(t.head);
                        touched_ent.push(t.tail);
                        touched_rel.push(t.relation);
                    }
                }
            }

            touched_ent.sort_unstable();
            touched_ent.dedup();
            touched_rel.sort_unstable();
            touched_rel.dedup();
            let lr = config.learning_rate;
            for &e in &touched_ent {
                sgd(self.table.entities.row_mut(e), grad_local.row_mut(e), lr);
                sgd(self.global_rows.row_mut(e), grad_global.row_mut(e), lr);
            }
            for &r in &touched_rel {
                sgd(self.table.relations.row_mut(r), grad_rel.row_mut(r), lr);
            }
            touched_ent.clear();
            touched_rel.clear();

            let ns = batch_ns * inv_b;
            let kd = batch_kd * inv_b;
            stats.ns_loss += ns;
            stats.distill_loss += kd;
            stats.loss += ns + config.distill_weight * kd;
            batches += 1;
        }
        let inv = 1.0 / batches as f64;
        stats.loss *= inv;
        stats.ns_loss *= inv;
        stats.distill_loss *= inv;
        stats
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `param -= lr * grad`, then clears `grad`.
#[inline]
fn sgd(param: &mut [f64], grad: &mut [f64], lr: f64) {
    for (p, g) in param.iter_mut().zip(grad.iter_mut()) {
        if lr != 0.0 {
            *p -= lr * *g;
        }
        *g = 0.0;
    }
}
