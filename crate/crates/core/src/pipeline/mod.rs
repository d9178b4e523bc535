//! The three experiment arms (raw, retrained, unlearned) and the
//! replace-and-recycle step that scrubs forget-set rows.

mod snapshot;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;

use crate::diffusion::{concat_triple, split_triple, DiffusionConfig, Scrubber};
use crate::embedding::{init_embeddings, ModelKind};
use crate::error::{Error, Result};
use crate::fed::{
    aggregate, run_round, thread_pool, ClientState, RoundSummary, ServerState, TrainConfig,
};
use crate::kg::{split_forget, ForgetSplit, Partition, Triple};
use crate::matrix::Matrix;
use crate::rng::{self, stream};

pub use snapshot::{ClientSnapshot, ModelSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    Raw,
    Retrained,
    Unlearned,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Raw, Arm::Retrained, Arm::Unlearned];

    /// Capitalized name for table rows.
    pub fn title(self) -> &'static str {
        match self {
            Arm::Raw => "Raw",
            Arm::Retrained => "Retrained",
            Arm::Unlearned => "Unlearned",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Raw => "raw",
            Arm::Retrained => "retrained",
            Arm::Unlearned => "unlearned",
        })
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" => Ok(Arm::Raw),
            "retrained" => Ok(Arm::Retrained),
            "unlearned" => Ok(Arm::Unlearned),
            _ => Err(Error::invalid(format!("unknown arm {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub model: ModelKind,
    pub dim: usize,
    pub train: TrainConfig,
    pub diffusion: DiffusionConfig,
    pub forget_ratio: f64,
    /// Fine-tune rounds after scrubbing (R_u).
    pub finetune_rounds: usize,
    /// Write an intermediate snapshot every this many rounds; 0 disables.
    pub checkpoint_interval: usize,
    pub threads: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            model: ModelKind::TransE,
            dim: 32,
            finetune_rounds: default_finetune_rounds(train.rounds),
            train,
            diffusion: DiffusionConfig::default(),
            forget_ratio: 0.05,
            checkpoint_interval: 0,
            threads: 1,
        }
    }
}

/// 20% of the raw round count.
pub fn default_finetune_rounds(rounds: usize) -> usize {
    (0.2 * rounds as f64).round() as usize
}

impl ExperimentPlan {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.diffusion.validate()?;
        if !(0.0..=1.0).contains(&self.forget_ratio) {
            return Err(Error::Config(format!(
                "forget_ratio {} outside [0, 1]",
                self.forget_ratio
            )));
        }
        if self.dim == 0 || (self.model == ModelKind::ComplEx && !self.dim.is_multiple_of(2)) {
            return Err(Error::Config(format!(
                "dim {} is not valid for {}",
                self.dim, self.model
            )));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }
}

/// A partition together with each client's forget/remaining split.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub partition: Partition,
    pub splits: Vec<ForgetSplit>,
}

impl ExperimentData {
    /// Splits every client's training triples with its own derived seed.
    pub fn new(partition: Partition, forget_ratio: f64, seed: u64) -> Result<Self> {
        let splits = partition
            .clients
            .iter()
            .enumerate()
            .map(|(k, c)| split_forget(&c.train, forget_ratio, rng::derive_seed(seed, &[k as u64])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { partition, splits })
    }

    pub fn forget_triples(&self) -> Vec<Triple> {
        self.splits
            .iter()
            .flat_map(|s| s.forget.iter().copied())
            .collect()
    }

    pub fn test_triples(&self) -> Vec<Triple> {
        self.partition
            .clients
            .iter()
            .flat_map(|c| c.test.iter().copied())
            .collect()
    }

    /// Every triple known to the dataset, for filtered ranking.
    pub fn known_triples(&self) -> HashSet<Triple> {
        self.partition.all_triples().into_iter().collect()
    }
}

/// Where an arm's outputs go: `<root>/<arm>/<seed>/`.
pub fn run_dir(root: &Path, arm: Arm, seed: u64) -> PathBuf {
    root.join(arm.to_string()).join(seed.to_string())
}

pub fn snapshot_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("snapshot")
}

struct RoundLog {
    path: PathBuf,
    file: fs::File,
}

impl RoundLog {
    fn create(run_dir: &Path) -> Result<Self> {
        fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let path = run_dir.join("log.csv");
        let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(file, "{}", RoundSummary::CSV_HEADER).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file })
    }

    fn push(&mut self, s: &RoundSummary) -> Result<()> {
        writeln!(self.file, "{}", s.csv_line()).map_err(|e| Error::io(&self.path, e))
    }
}

fn train_rounds(
    plan: &ExperimentPlan,
    arm: Arm,
    server: &mut ServerState,
    clients: &mut [ClientState],
    rounds: usize,
    run_dir: &Path,
    log: &mut RoundLog,
) -> Result<()> {
    let pool = thread_pool(plan.threads)?;
    for _ in 0..rounds {
        let summary = run_round(server, clients, &plan.train, &pool)?;
        log.push(&summary)?;
        if plan.checkpoint_interval > 0 && server.round.is_multiple_of(plan.checkpoint_interval) {
            ModelSnapshot::capture(arm, plan.seed(), server, clients)?
                .write(&run_dir.join(format!("checkpoint_{:04}", server.round)))?;
        }
    }
    Ok(())
}

/// Shared initialization plus per-client training sets: all training
/// triples for the raw arm, remaining triples otherwise.
pub(crate) fn fresh_state(
    plan: &ExperimentPlan,
    data: &ExperimentData,
    arm: Arm,
) -> Result<(ServerState, Vec<ClientState>)> {
    let p = &data.partition;
    let init = init_embeddings(
        plan.model,
        p.entity_count(),
        p.relation_count(),
        plan.dim,
        plan.seed(),
    )?;
    let clients = p
        .clients
        .iter()
        .zip(&data.splits)
        .enumerate()
        .map(|(k, (c, split))| {
            let train = match arm {
                Arm::Raw => c.train.clone(),
                _ => split.remaining.clone(),
            };
            ClientState::new(k, c.relations.clone(), train, &[], &init)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ServerState::new(&init), clients))
}

fn fresh_run(
    plan: &ExperimentPlan,
    data: &ExperimentData,
    arm: Arm,
    run_dir: &Path,
) -> Result<ModelSnapshot> {
    plan.validate()?;
    let (mut server, mut clients) = fresh_state(plan, data, arm)?;
    let mut log = RoundLog::create(run_dir)?;
    train_rounds(
        plan,
        arm,
        &mut server,
        &mut clients,
        plan.train.rounds,
        run_dir,
        &mut log,
    )?;
    let snap = ModelSnapshot::capture(arm, plan.seed(), &server, &clients)?;
    snap.write(&snapshot_dir(run_dir))?;
    info!("{arm} arm finished after {} rounds", server.round);
    Ok(snap)
}

/// Federated training on every training triple.
pub fn run_raw(
    plan: &ExperimentPlan,
    data: &ExperimentData,
    run_dir: &Path,
) -> Result<ModelSnapshot> {
    fresh_run(plan, data, Arm::Raw, run_dir)
}

/// Same procedure and initialization as the raw arm, on remaining triples
/// only.
pub fn run_retrained(
    plan: &ExperimentPlan,
    data: &ExperimentData,
    run_dir: &Path,
) -> Result<ModelSnapshot> {
    fresh_run(plan, data, Arm::Retrained, run_dir)
}

/// Overwrites the rows addressed by `forget` with the mean of the matching
/// thirds of `replacements`. Rows not named by any forget triple are left
/// alone.
pub fn scatter_replacements(
    client: &mut ClientState,
    forget: &[Triple],
    replacements: &[Vec<f64>],
) -> Result<()> {
    if forget.len() != replacements.len() {
        return Err(Error::DimensionMismatch {
            expected: forget.len(),
            actual: replacements.len(),
        });
    }
    let dim = client.table.dim();
    let mut ent_sum = Matrix::zeros(client.table.entity_count(), dim);
    let mut ent_n = vec![0usize; client.table.entity_count()];
    let mut rel_sum = Matrix::zeros(client.table.relation_count(), dim);
    let mut rel_n = vec![0usize; client.table.relation_count()];
    for (t, v) in forget.iter().zip(replacements) {
        if v.len() != 3 * dim {
            return Err(Error::DimensionMismatch {
                expected: 3 * dim,
                actual: v.len(),
            });
        }
        let (h, r, tl) = split_triple(v)?;
        let local = |e: usize| {
            client.local_row(e).ok_or_else(|| {
                Error::invalid(format!("client {}: entity {e} has no local row", client.id))
            })
        };
        let (hi, ti) = (local(t.head)?, local(t.tail)?);
        if t.relation >= rel_n.len() {
            return Err(Error::IndexOutOfRange {
                index: t.relation,
                len: rel_n.len(),
            });
        }
        for (i, third) in [(hi, h), (ti, tl)] {
            ent_sum
                .row_mut(i)
                .iter_mut()
                .zip(third)
                .for_each(|(s, x)| *s += x);
            ent_n[i] += 1;
        }
        rel_sum
            .row_mut(t.relation)
            .iter_mut()
            .zip(r)
            .for_each(|(s, x)| *s += x);
        rel_n[t.relation] += 1;
    }
    let write = |target: &mut Matrix, sums: &Matrix, counts: &[usize]| {
        for (i, &n) in counts.iter().enumerate().filter(|(_, &n)| n > 0) {
            let row = target.row_mut(i);
            for (dst, s) in row.iter_mut().zip(sums.row(i)) {
                *dst = s / n as f64;
            }
        }
    };
    write(&mut client.table.entities, &ent_sum, &ent_n);
    write(&mut client.table.relations, &rel_sum, &rel_n);
    Ok(())
}

/// Per client: fit a diffusion model to its forget-triple embeddings,
/// generate a replacement for each, and scatter them into its table.
/// Fitted models are written under `model_dir` when given.
pub fn scrub_clients(
    plan: &ExperimentPlan,
    data: &ExperimentData,
    clients: &mut [ClientState],
    model_dir: Option<&Path>,
) -> Result<()> {
    let seed = plan.seed();
    let pool = thread_pool(plan.threads)?;
    let fitted: Vec<Result<Option<Scrubber>>> = pool.install(|| {
        clients
            .par_iter_mut()
            .map(|c| {
                let forget = &data.splits[c.id].forget;
                if forget.is_empty() {
                    return Ok(None);
                }
                let x0 = forget
                    .iter()
                    .map(|t| {
                        let row = |e: usize| {
                            c.local_row(e)
                                .map(|i| c.table.entities.row(i))
                                .ok_or_else(|| {
                                    Error::invalid(format!(
                                        "client {}: entity {e} has no local row",
                                        c.id
                                    ))
                                })
                        };
                        Ok(concat_triple(
                            row(t.head)?,
                            c.table.relations.row(t.relation),
                            row(t.tail)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let id = c.id as u64;
                let scrubber = Scrubber::fit(
                    &x0,
                    &plan.diffusion,
                    &mut rng::derive(seed, &[stream::DIFFUSION_INIT, id]),
                    &mut rng::derive(seed, &[stream::DIFFUSION_TRAIN, id]),
                )?;
                let replacements = x0
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        scrubber.generate(
                            x,
                            &mut rng::derive(seed, &[stream::DIFFUSION_GEN, id, i as u64]),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                scatter_replacements(c, forget, &replacements)?;
                Ok(Some(scrubber))
            })
            .collect()
    });
    for (k, f) in fitted.into_iter().enumerate() {
        if let (Some(s), Some(dir)) = (f?, model_dir) {
            s.write(&dir.join(format!("client_{k}")))?;
        }
    }
    Ok(())
}

/// Scrubs the raw snapshot's forget rows, recycles the scrubbed rows into
/// the server, then fine-tunes for `finetune_rounds` on remaining triples.
pub fn run_unlearned(
    plan: &ExperimentPlan,
    data: &ExperimentData,
    raw: &ModelSnapshot,
    run_dir: &Path,
) -> Result<ModelSnapshot> {
    plan.validate()?;
    if raw.clients.len() != data.splits.len() {
        return Err(Error::invalid(format!(
            "raw snapshot has {} clients but the partition has {}",
            raw.clients.len(),
            data.splits.len()
        )));
    }
    let mut clients = raw
        .clients
        .iter()
        .zip(&data.splits)
        .map(|(c, split)| c.to_client(split.remaining.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut server = raw.server_state();
    let mut log = RoundLog::create(run_dir)?;

    if data.splits.iter().all(|s| s.forget.is_empty()) {
        warn!("forget set is empty; skipping diffusion, unlearned arm is raw plus fine-tuning");
    } else {
        scrub_clients(plan, data, &mut clients, Some(&run_dir.join("diffusion")))?;
        aggregate(&mut server, clients.iter());
    }
    train_rounds(
        plan,
        Arm::Unlearned,
        &mut server,
        &mut clients,
        plan.finetune_rounds,
        run_dir,
        &mut log,
    )?;
    let snap = ModelSnapshot::capture(Arm::Unlearned, plan.seed(), &server, &clients)?;
    snap.write(&snapshot_dir(run_dir))?;
    info!(
        "unlearned arm finished after {} fine-tune rounds",
        plan.finetune_rounds
    );
    Ok(snap)
}

/// Runs one arm under `root`. The unlearned arm reads the raw arm's stored
/// snapshot for the same seed.
pub fn run_arm(
    plan: &ExperimentPlan,
    data: &ExperimentData,
    arm: Arm,
    root: &Path,
) -> Result<ModelSnapshot> {
    let dir = run_dir(root, arm, plan.seed());
    match arm {
        Arm::Raw => run_raw(plan, data, &dir),
        Arm::Retrained => run_retrained(plan, data, &dir),
        Arm::Unlearned => {
            let raw_dir = snapshot_dir(&run_dir(root, Arm::Raw, plan.seed()));
            let raw = ModelSnapshot::read(&raw_dir).map_err(|e| match e {
                Error::MissingSnapshot(p) => Error::MissingSnapshot(format!(
                    "no raw snapshot at {p}; run the raw arm first (e.g. --arms raw,unlearned)"
                )),
                other => other,
            })?;
            run_unlearned(plan, data, &raw, &dir)
        }
    }
}
