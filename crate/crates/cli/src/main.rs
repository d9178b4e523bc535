use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use feddm::config::RunConfig;
use feddm::eval::emit_report;
use feddm::experiment::{load_partition, median_report, run_experiment, write_seed_report};

const RUN_DIR_ENV: &str = "FEDDM_RUN_DIR";

#[derive(Parser)]
#[command(
    name = "feddm",
    version,
    about = "Federated KG embedding with diffusion-based unlearning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a triple file into per-client files by relation.
    Partition(PartitionArgs),
    /// Train the requested arms and write snapshots.
    Run(CommonArgs),
    /// Evaluate stored snapshots for one seed.
    Eval(CommonArgs),
    /// Median report over every evaluated seed.
    Report(CommonArgs),
}

#[derive(Args)]
struct PartitionArgs {
    /// Training triples (head, relation, tail separated by tabs).
    #[arg(long, conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Test triples; held out from the input when absent.
    #[arg(long, requires = "input")]
    test: Option<PathBuf>,
    /// Generate a synthetic graph instead, e.g. `entities=200 relations=10`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    synthetic: Option<Vec<String>>,
    #[arg(long, default_value_t = 3)]
    clients: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Held-out fraction when no test file is given.
    #[arg(long, default_value_t = 0.1)]
    test_ratio: f64,
    /// Output directory [default: <run dir>/partition].
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma separated subset of raw,retrained,unlearned.
    #[arg(long)]
    arms: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for client-level parallelism.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    synthetic: Option<Vec<String>>,
    /// Directory written by `partition`.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Output root [env: FEDDM_RUN_DIR].
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Any other config key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl CommonArgs {
    /// Config file, then the run-dir env var, then flags. Returns the
    /// config and the file's text for the verbatim copy.
    fn resolve(&self) -> Result<(RunConfig, Option<String>)> {
        let mut cfg = RunConfig::default();
        let mut text = None;
        if let Some(path) = &self.config {
            let t = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply_text(&t, path)?;
            text = Some(t);
        }
        if let Ok(dir) = std::env::var(RUN_DIR_ENV) {
            if !dir.is_empty() {
                cfg.set("run_dir", &dir)?;
            }
        }
        let mut set = |k: &str, v: String| cfg.set(k, &v);
        if let Some(s) = &self.synthetic {
            set("synthetic", s.join(" "))?;
        }
        if let Some(p) = &self.partition {
            set("partition", p.display().to_string())?;
        }
        for (k, v) in [
            ("arms", self.arms.clone()),
            ("rounds", self.rounds.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            (
                "run_dir",
                self.run_dir.as_ref().map(|p| p.display().to_string()),
            ),
        ] {
            if let Some(v) = v {
                set(k, v)?;
            }
        }
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {kv:?}");
            };
            set(k.trim(), v.to_owned())?;
        }
        cfg.validate()?;
        Ok((cfg, text))
    }
}

fn run_root(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| {
            std::env::var(RUN_DIR_ENV)
                .ok()
                .filter(|s| !s.is_empty())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| RunConfig::default().run_dir)
}

fn cmd_partition(args: &PartitionArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    match (&args.input, &args.synthetic) {
        (Some(input), None) => {
            cfg.set("train", &input.display().to_string())?;
            if let Some(test) = &args.test {
                cfg.set("test", &test.display().to_string())?;
            }
        }
        (None, Some(spec)) => cfg.set("synthetic", &spec.join(" "))?,
        _ => bail!("partition needs exactly one of --input or --synthetic"),
    }
    cfg.set("clients", &args.clients.to_string())?;
    cfg.set("seed", &args.seed.to_string())?;
    cfg.set("test_ratio", &args.test_ratio.to_string())?;
    cfg.validate()?;
    let part = load_partition(&cfg)?;
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| run_root(&args.run_dir).join("partition"));
    part.write(&out)?;
    println!(
        "wrote {} client files for {} relations to {}",
        part.clients.len(),
        part.relation_count(),
        out.display()
    );
    Ok(())
}

fn cmd_run(args: &CommonArgs) -> Result<()> {
    let (cfg, text) = args.resolve()?;
    let snaps = run_experiment(&cfg, text.as_deref())?;
    for s in &snaps {
        info!("{} arm: {} rounds", s.arm, s.round);
    }
    println!(
        "wrote {} snapshot(s) under {}",
        snaps.len(),
        cfg.run_dir.display()
    );
    Ok(())
}

fn cmd_eval(args: &CommonArgs) -> Result<()> {
    let (cfg, _) = args.resolve()?;
    let dir = write_seed_report(&cfg.run_dir, cfg.seed())?;
    print_report(&dir)
}

fn cmd_report(args: &CommonArgs) -> Result<()> {
    let (cfg, _) = args.resolve()?;
    let (rows, seeds) = median_report(&cfg.run_dir)?;
    emit_report(&rows, &cfg.run_dir)?;
    println!("median over {seeds} seed(s)");
    print_report(&cfg.run_dir)
}

fn print_report(dir: &Path) -> Result<()> {
    let md = dir.join("report.md");
    print!(
        "{}",
        fs::read_to_string(&md).with_context(|| format!("reading {}", md.display()))?
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Partition(a) => cmd_partition(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    }
}
