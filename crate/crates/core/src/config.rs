//! Flat `key=value` run configuration, shared by the CLI and the Python
//! bindings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diffusion::StartFrom;
use crate::embedding::{ModelKind, Norm};
use crate::error::{Error, Result};
use crate::kg::synthetic::SyntheticSpec;
use crate::pipeline::{default_finetune_rounds, Arm, ExperimentPlan};

/// Where the triples come from. Exactly one source is used.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Directory written by the `partition` command.
    Partition(PathBuf),
    /// Raw triple files; test triples are held out when `test` is absent.
    Files {
        train: PathBuf,
        test: Option<PathBuf>,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    pub clients: usize,
    pub test_ratio: f64,
    pub arms: Vec<Arm>,
    pub run_dir: PathBuf,
    pub filtered: bool,
    /// `None` means 20% of `plan.train.rounds`.
    pub finetune_rounds: Option<usize>,
    pub plan: ExperimentPlan,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic(SyntheticSpec::default()),
            clients: 3,
            test_ratio: 0.1,
            arms: Arm::ALL.to_vec(),
            run_dir: PathBuf::from("runs"),
            filtered: true,
            finetune_rounds: None,
            plan: ExperimentPlan::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "synthetic",
    "partition",
    "train",
    "test",
    "clients",
    "test_ratio",
    "arms",
    "run_dir",
    "filtered",
    "seed",
    "threads",
    "model",
    "dim",
    "norm",
    "rounds",
    "client_fraction",
    "local_epochs",
    "batch_size",
    "learning_rate",
    "negatives",
    "margin",
    "distill_weight",
    "forget_ratio",
    "finetune_rounds",
    "checkpoint_interval",
    "diffusion_steps",
    "beta_start",
    "beta_end",
    "diffusion_width",
    "diffusion_train_steps",
    "diffusion_batch_size",
    "diffusion_learning_rate",
    "start_from",
    "train_heads",
    "heads_steps",
    "heads_learning_rate",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value for {key}: {value:?}"))),
    }
}

pub fn parse_arms(value: &str) -> Result<Vec<Arm>> {
    let mut arms = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Arm>().map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    arms.sort();
    arms.dedup();
    if arms.is_empty() {
        return Err(Error::Config("arms must name at least one arm".into()));
    }
    Ok(arms)
}

impl RunConfig {
    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let p = &mut self.plan;
        let d = &mut p.diffusion;
        match key {
            "synthetic" => {
                self.source = DataSource::Synthetic(SyntheticSpec::parse(value.split_whitespace())?)
            }
            "partition" => self.source = DataSource::Partition(PathBuf::from(value)),
            "train" => {
                let test = match &self.source {
                    DataSource::Files { test, .. } => test.clone(),
                    _ => None,
                };
                self.source = DataSource::Files {
                    train: PathBuf::from(value),
                    test,
                };
            }
            "test" => match &mut self.source {
                DataSource::Files { test, .. } => *test = Some(PathBuf::from(value)),
                _ => return Err(Error::Config("test requires train to be set first".into())),
            },
            "clients" => self.clients = parse_value(key, value)?,
            "test_ratio" => self.test_ratio = parse_value(key, value)?,
            "arms" => self.arms = parse_arms(value)?,
            "run_dir" => self.run_dir = PathBuf::from(value),
            "filtered" => self.filtered = parse_bool(key, value)?,
            "seed" => p.train.seed = parse_value(key, value)?,
            "threads" => p.threads = parse_value(key, value)?,
            "model" => {
                p.model = value
                    .parse::<ModelKind>()
                    .map_err(|e| Error::Config(e.to_string()))?
            }
            "dim" => p.dim = parse_value(key, value)?,
            "norm" => {
                p.train.norm = value
                    .parse::<Norm>()
                    .map_err(|e| Error::Config(e.to_string()))?
            }
            "rounds" => p.train.rounds = parse_value(key, value)?,
            "client_fraction" => p.train.client_fraction = parse_value(key, value)?,
            "local_epochs" => p.train.local_epochs = parse_value(key, value)?,
            "batch_size" => p.train.batch_size = parse_value(key, value)?,
            "learning_rate" => p.train.learning_rate = parse_value(key, value)?,
            "negatives" => p.train.negatives = parse_value(key, value)?,
            "margin" => p.train.margin = parse_value(key, value)?,
            "distill_weight" => p.train.distill_weight = parse_value(key, value)?,
            "forget_ratio" => p.forget_ratio = parse_value(key, value)?,
            "finetune_rounds" => self.finetune_rounds = Some(parse_value(key, value)?),
            "checkpoint_interval" => p.checkpoint_interval = parse_value(key, value)?,
            "diffusion_steps" => d.steps = parse_value(key, value)?,
            "beta_start" => d.beta_start = parse_value(key, value)?,
            "beta_end" => d.beta_end = parse_value(key, value)?,
            "diffusion_width" => d.width = parse_value(key, value)?,
            "diffusion_train_steps" => d.train_steps = parse_value(key, value)?,
            "diffusion_batch_size" => d.batch_size = parse_value(key, value)?,
            "diffusion_learning_rate" => d.learning_rate = parse_value(key, value)?,
            "start_from" => {
                d.start_from = value
                    .parse::<StartFrom>()
                    .map_err(|e| Error::Config(e.to_string()))?
            }
            "train_heads" => d.train_heads = parse_bool(key, value)?,
            "heads_steps" => d.heads_steps = parse_value(key, value)?,
            "heads_learning_rate" => d.heads_learning_rate = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: "expected key=value".into(),
            })?;
            self.set(k.trim(), v).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// The plan with `finetune_rounds` resolved.
    pub fn resolved_plan(&self) -> ExperimentPlan {
        let mut plan = self.plan.clone();
        plan.finetune_rounds = self
            .finetune_rounds
            .unwrap_or_else(|| default_finetune_rounds(plan.train.rounds));
        plan
    }

    pub fn seed(&self) -> u64 {
        self.plan.train.seed
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Config("clients must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.test_ratio) {
            return Err(Error::Config(format!(
                "test_ratio {} outside [0, 1)",
                self.test_ratio
            )));
        }
        self.resolved_plan().validate()
    }

    /// Every key with its effective value, one per line, in [`KEYS`] order.
    /// Parsing this text back yields an equal config.
    pub fn to_text(&self) -> String {
        let p = self.resolved_plan();
        let d = &p.diffusion;
        let t = &p.train;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        match &self.source {
            DataSource::Synthetic(s) => put("synthetic", s.to_token()),
            DataSource::Partition(dir) => put("partition", dir.display().to_string()),
            DataSource::Files { train, test } => {
                put("train", train.display().to_string());
                if let Some(test) = test {
                    put("test", test.display().to_string());
                }
            }
        }
        put("clients", self.clients.to_string());
        put("test_ratio", self.test_ratio.to_string());
        put(
            "arms",
            self.arms
                .iter()
                .map(Arm::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        put("run_dir", self.run_dir.display().to_string());
        put("filtered", self.filtered.to_string());
        put("seed", t.seed.to_string());
        put("threads", p.threads.to_string());
        put("model", p.model.to_string());
        put("dim", p.dim.to_string());
        put("norm", t.norm.to_string());
        put("rounds", t.rounds.to_string());
        put("client_fraction", t.client_fraction.to_string());
        put("local_epochs", t.local_epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("negatives", t.negatives.to_string());
        put("margin", t.margin.to_string());
        put("distill_weight", t.distill_weight.to_string());
        put("forget_ratio", p.forget_ratio.to_string());
        put("finetune_rounds", p.finetune_rounds.to_string());
        put("checkpoint_interval", p.checkpoint_interval.to_string());
        put("diffusion_steps", d.steps.to_string());
        put("beta_start", d.beta_start.to_string());
        put("beta_end", d.beta_end.to_string());
        put("diffusion_width", d.width.to_string());
        put("diffusion_train_steps", d.train_steps.to_string());
        put("diffusion_batch_size", d.batch_size.to_string());
        put("diffusion_learning_rate", d.learning_rate.to_string());
        put("start_from", d.start_from.to_string());
        put("train_heads", d.train_heads.to_string());
        put("heads_steps", d.heads_steps.to_string());
        put("heads_learning_rate", d.heads_learning_rate.to_string());
        out
    }
}
