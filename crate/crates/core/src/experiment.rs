//! End-to-end driver: build the dataset a config describes, run its arms,
//! and turn stored snapshots into reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::config::{DataSource, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate, read_report_csv, ReportRow, Scope, Split};
use crate::kg::synthetic::generate;
use crate::kg::{holdout, load_triples, KnowledgeGraph, Partition};
use crate::pipeline::{run_arm, run_dir, snapshot_dir, Arm, ExperimentData, ModelSnapshot};

/// Name of the verbatim config copy inside each run directory.
pub const CONFIG_COPY: &str = "config.txt";
/// Name of the fully resolved config inside each run directory.
pub const RESOLVED_CONFIG: &str = "resolved.conf";

/// Builds the partition the config points at.
pub fn load_partition(cfg: &RunConfig) -> Result<Partition> {
    let seed = cfg.seed();
    let from_graph = |kg: KnowledgeGraph, test: Option<Vec<_>>| {
        let (train, test) = match test {
            Some(test) => (kg.triples.clone(), test),
            None => holdout(&kg.triples, cfg.test_ratio, seed)?,
        };
        Partition::build(&kg.with_triples(train), &test, cfg.clients, seed)
    };
    match &cfg.source {
        DataSource::Partition(dir) => Partition::read(dir),
        DataSource::Synthetic(spec) => from_graph(generate(spec, seed)?, None),
        DataSource::Files { train, test } => {
            let kg = load_triples(train)?;
            let test = match test {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    Some(kg.resolve_str(&text, path)?)
                }
                None => None,
            };
            from_graph(kg, test)
        }
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<ExperimentData> {
    ExperimentData::new(load_partition(cfg)?, cfg.plan.forget_ratio, cfg.seed())
}

/// Runs the configured arms in order raw, retrained, unlearned. The config
/// copy (`verbatim`, or the resolved text when absent) and the resolved
/// config are written to each run directory before training starts.
pub fn run_experiment(cfg: &RunConfig, verbatim: Option<&str>) -> Result<Vec<ModelSnapshot>> {
    cfg.validate()?;
    let plan = cfg.resolved_plan();
    let data = load_data(cfg)?;
    let resolved = cfg.to_text();
    let mut out = Vec::new();
    for &arm in &cfg.arms {
        let dir = run_dir(&cfg.run_dir, arm, cfg.seed());
        if arm == Arm::Unlearned
            && !snapshot_dir(&run_dir(&cfg.run_dir, Arm::Raw, cfg.seed())).exists()
        {
            return Err(Error::MissingSnapshot(format!(
                "the unlearned arm needs a raw snapshot under {}; run the raw arm first",
                run_dir(&cfg.run_dir, Arm::Raw, cfg.seed()).display()
            )));
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (name, text) in [
            (CONFIG_COPY, verbatim.unwrap_or(&resolved)),
            (RESOLVED_CONFIG, resolved.as_str()),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        info!("running {arm} arm, seed {}", cfg.seed());
        out.push(run_arm(&plan, &data, arm, &cfg.run_dir)?);
    }
    Ok(out)
}

/// Evaluates every arm stored under `root` for `seed`, each with the
/// resolved config saved next to its snapshot.
pub fn evaluate_seed(root: &Path, seed: u64) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for arm in Arm::ALL {
        let dir = run_dir(root, arm, seed);
        if !snapshot_dir(&dir).exists() {
            continue;
        }
        let cfg = RunConfig::from_file(&dir.join(RESOLVED_CONFIG))?;
        let data = load_data(&cfg)?;
        let snap = ModelSnapshot::read(&snapshot_dir(&dir))?;
        let known = data.known_triples();
        let filter = cfg.filtered.then_some(&known);
        let splits = [
            (Split::Forget, data.forget_triples()),
            (Split::Test, data.test_triples()),
        ];
        for scope in [Scope::Local, Scope::Global] {
            for (split, triples) in &splits {
                if triples.is_empty() {
                    continue;
                }
                let m = evaluate(&snap, triples, scope, filter, cfg.plan.train.norm)?;
                rows.push(ReportRow::new(arm, scope, *split, snap.kind, &m));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::MissingSnapshot(format!(
            "no snapshots for seed {seed} under {}",
            root.display()
        )));
    }
    Ok(rows)
}

pub fn seed_report_dir(root: &Path, seed: u64) -> PathBuf {
    root.join("reports").join(seed.to_string())
}

/// Evaluates `seed` and writes `report.md` / `report.csv` for it.
pub fn write_seed_report(root: &Path, seed: u64) -> Result<PathBuf> {
    let rows = evaluate_seed(root, seed)?;
    let dir = seed_report_dir(root, seed);
    emit_report(&rows, &dir)?;
    Ok(dir)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-row medians over every per-seed report under `root/reports`.
pub fn median_report(root: &Path) -> Result<(Vec<ReportRow>, usize)> {
    let dir = root.join("reports");
    let mut csvs: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .map(|e| e.path().join("report.csv"))
            .filter(|p| p.exists())
            .collect(),
        Err(_) => Vec::new(),
    };
    csvs.sort();
    if csvs.is_empty() {
        return Err(Error::MissingSnapshot(format!(
            "no per-seed reports under {}; run eval first",
            dir.display()
        )));
    }
    let mut groups: BTreeMap<_, Vec<ReportRow>> = BTreeMap::new();
    for path in &csvs {
        for row in read_report_csv(path)? {
            groups
                .entry((row.scope, row.arm, row.split, row.model.to_string()))
                .or_default()
                .push(row);
        }
    }
    let rows = groups
        .into_values()
        .map(|rows| {
            let mut out = rows[0].clone();
            for (i, v) in out.values.iter_mut().enumerate() {
                let mut col: Vec<f64> = rows.iter().map(|r| r.values[i]).collect();
                *v = median(&mut col);
            }
            out
        })
        .collect();
    Ok((rows, csvs.len()))
}
