//! Federated round orchestration: client selection, distribution of server
//! rows, local training with mutual distillation, and averaging.

mod client;
pub mod losses;

use std::fmt::Write as _;

use rand::seq::index;
use rayon::prelude::*;

use crate::embedding::{EmbeddingTable, Norm};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, stream, Rng};

pub use client::{ClientState, EpochStats};
pub use losses::{candidate_distribution, distill_loss, ns_loss};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rounds: usize,
    pub client_fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub negatives: usize,
    pub margin: f64,
    pub distill_weight: f64,
    pub norm: Norm,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            client_fraction: 1.0,
            local_epochs: 1,
            batch_size: 128,
            learning_rate: 0.5,
            negatives: 16,
            margin: 0.0,
            distill_weight: 0.5,
            norm: Norm::L1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return bad("client_fraction must be in (0, 1]");
        }
        if self.batch_size == 0 || self.negatives == 0 {
            return bad("batch_size and negatives must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(self.distill_weight >= 0.0 && self.distill_weight.is_finite()) {
            return bad("distill_weight must be finite and >= 0");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be finite and >= 0");
        }
        Ok(())
    }
}

/// Server-side state: the global entity table and the round counter.
/// Relation vectors stay with the clients.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub entities: Matrix,
    pub round: usize,
}

impl ServerState {
    pub fn new(init: &EmbeddingTable) -> Self {
        Self {
            entities: init.entities.clone(),
            round: 0,
        }
    }
}

/// `⌈fraction · n⌉` distinct ids drawn uniformly, returned sorted.
pub fn select_clients(n_clients: usize, fraction: f64, rng: &mut Rng) -> Vec<usize> {
    if n_clients == 0 {
        return Vec::new();
    }
    let k = ((fraction * n_clients as f64 - 1e-9).ceil() as usize).clamp(1, n_clients);
    let mut ids = index::sample(rng, n_clients, k).into_vec();
    ids.sort_unstable();
    ids
}

/// Sets each global row held by at least one of `clients` to the mean of
/// their local copies. Rows no client holds are left alone.
pub fn aggregate<'a>(server: &mut ServerState, clients: impl IntoIterator<Item = &'a ClientState>) {
    let n = server.entities.rows();
    let mut counts = vec![0u32; n];
    let mut clients: Vec<&ClientState> = clients.into_iter().collect();
    clients.sort_by_key(|c| c.id);
    for c in clients {
        for (i, &g) in c.index_map.iter().enumerate() {
            counts[g] += 1;
            let k = counts[g] as f64;
            let row = server.entities.row_mut(g);
            if counts[g] == 1 {
                row.copy_from_slice(c.table.entities.row(i));
            } else {
                // running mean; exact when all copies agree
                for (m, &x) in row.iter_mut().zip(c.table.entities.row(i)) {
                    *m += (x - *m) / k;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub selected: Vec<usize>,
    pub mean_ns_loss: f64,
    pub mean_distill_loss: f64,
}

impl RoundSummary {
    pub const CSV_HEADER: &'static str = "round,selected_ids,mean_ns_loss,mean_distill_loss";

    pub fn csv_line(&self) -> String {
        let ids: Vec<String> = self.selected.iter().map(usize::to_string).collect();
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{:.8e},{:.8e}",
            self.round,
            ids.join(";"),
            self.mean_ns_loss,
            self.mean_distill_loss
        );
        s
    }
}

fn client_rng(seed: u64, client: usize, round: usize) -> Rng {
    rng::derive(seed, &[stream::CLIENT, client as u64, round as u64])
}

/// select → distribute → local epochs → aggregate. Client work runs on
/// `pool`; results do not depend on its size.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    config: &TrainConfig,
    pool: &rayon::ThreadPool,
) -> Result<RoundSummary> {
    let round = server.round;
    let mut select_rng = rng::derive(config.seed, &[stream::SELECT, round as u64]);
    let ids: Vec<usize> = clients.iter().map(|c| c.id).collect();
    let selected: Vec<usize> =
        select_clients(clients.len(), config.client_fraction, &mut select_rng)
            .into_iter()
            .map(|i| ids[i])
            .collect();

    let shared: &ServerState = server;
    let stats: Vec<Result<EpochStats>> = pool.install(|| {
        clients
            .par_iter_mut()
            .filter(|c| selected.contains(&c.id))
            .map(|c| {
                c.distribute(shared)?;
                let mut rng = client_rng(config.seed, c.id, round);
                let mut last = EpochStats::default();
                for _ in 0..config.local_epochs {
                    last = c.local_epoch(config, &mut rng);
                }
                Ok(last)
            })
            .collect()
    });
    let stats = stats.into_iter().collect::<Result<Vec<_>>>()?;

    aggregate(server, clients.iter().filter(|c| selected.contains(&c.id)));
    server.round += 1;

    let n = stats.len().max(1) as f64;
    Ok(RoundSummary {
        round: server.round,
        selected,
        mean_ns_loss: stats.iter().map(|s| s.ns_loss).sum::<f64>() / n,
        mean_distill_loss: stats.iter().map(|s| s.distill_loss).sum::<f64>() / n,
    })
}

pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}
