//! Command-line front end: scenario files, presets, experiment runs and
//! metric files.

pub mod config;
pub mod metrics;
pub mod presets;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use feddrl::env::Federation;
use feddrl::orchestrator::{run_on, ExperimentLog};

use crate::config::{parse_config, ScenarioConfig, StrategyEntry};

pub const THREADS_ENV: &str = "FEDDRL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "feddrl", version, about = "Federated learning simulator with a two-stage RL aggregator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one strategy and write its metrics.
    Run(RunArgs),
    /// Run several strategies on the same clients and data, one output
    /// directory per strategy.
    Compare(RunArgs),
    /// List built-in scenarios, or print one as TOML.
    Presets {
        /// Preset to print.
        name: Option<String>,
    },
    /// Check a scenario without running it or writing files.
    Validate(Source),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in scenario name, see `feddrl presets`.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: Source,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Strategy labels, comma separated. `run` takes one and defaults to
    /// the first configured entry; `compare` defaults to all entries.
    #[arg(long, value_delimiter = ',')]
    pub strategy: Vec<String>,
}

pub fn load(source: &Source) -> anyhow::Result<ScenarioConfig> {
    match (&source.config, &source.preset) {
        (Some(path), _) => Ok(parse_config(path)?),
        (None, Some(name)) => presets::get(name)
            .with_context(|| format!("unknown preset `{name}`; see `feddrl presets`")),
        (None, None) => bail!("pass --config <path> or --preset <name>"),
    }
}

/// Sizes the global rayon pool from `FEDDRL_THREADS` when set.
pub fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    // A pool built earlier in this process stays in place.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn prepare(args: &RunArgs) -> anyhow::Result<(ScenarioConfig, PathBuf)> {
    let mut cfg = load(&args.source)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

fn build_federation(cfg: &ScenarioConfig) -> anyhow::Result<Federation> {
    let world = cfg.world()?;
    Federation::build(&world, cfg.run.seed).context("cannot build the federation")
}

fn run_entry(cfg: &ScenarioConfig, fed: &Federation, entry: &StrategyEntry) -> anyhow::Result<ExperimentLog> {
    let exp = cfg.experiment(entry)?;
    run_on(fed, &exp).with_context(|| format!("strategy `{}` failed", entry.label()))
}

fn report(out: &mut impl Write, label: &str, log: &ExperimentLog, dir: &Path) -> anyhow::Result<()> {
    writeln!(
        out,
        "{label}: final global accuracy {:.4} after {} rounds -> {}",
        log.final_accuracy().unwrap_or(f64::NAN),
        log.rounds.len(),
        dir.display()
    )?;
    Ok(())
}

pub fn cmd_run(args: &RunArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let (cfg, dir) = prepare(args)?;
    let entry = match args.strategy.as_slice() {
        [] => cfg.strategy[0].clone(),
        [one] => cfg.strategy_entry(one)?,
        _ => bail!("`run` takes a single --strategy; use `compare` for several"),
    };
    let fed = build_federation(&cfg)?;
    let log = run_entry(&cfg, &fed, &entry)?;
    metrics::emit_metrics(&log, &dir, &cfg.output.formats)?;
    report(out, entry.label(), &log, &dir)
}

pub fn cmd_compare(args: &RunArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let (cfg, dir) = prepare(args)?;
    let entries: Vec<StrategyEntry> = if args.strategy.is_empty() {
        cfg.strategy.clone()
    } else {
        args.strategy
            .iter()
            .map(|s| cfg.strategy_entry(s))
            .collect::<Result<_, _>>()?
    };
    let fed = build_federation(&cfg)?;
    let mut table = String::from("strategy,final_global_acc\n");
    for entry in &entries {
        let log = run_entry(&cfg, &fed, entry)?;
        let sub = dir.join(entry.label());
        metrics::emit_metrics(&log, &sub, &cfg.output.formats)?;
        report(out, entry.label(), &log, &sub)?;
        table.push_str(&format!(
            "{},{:.6}\n",
            entry.label(),
            log.final_accuracy().unwrap_or(f64::NAN)
        ));
    }
    let path = dir.join("compare.csv");
    std::fs::write(&path, table).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn cmd_presets(name: Option<&str>, out: &mut impl Write) -> anyhow::Result<()> {
    match name {
        Some(n) => {
            let cfg = presets::get(n).with_context(|| format!("unknown preset `{n}`"))?;
            write!(out, "{}", cfg.to_toml()?)?;
        }
        None => {
            for p in presets::all() {
                writeln!(out, "{:<20} {}", p.name, p.description)?;
            }
        }
    }
    Ok(())
}

pub fn cmd_validate(source: &Source, out: &mut impl Write) -> anyhow::Result<()> {
    let cfg = load(source)?;
    build_federation(&cfg)?;
    let labels: Vec<&str> = cfg.strategy.iter().map(|s| s.label()).collect();
    writeln!(
        out,
        "ok: {} clients, {} rounds, strategies {}",
        cfg.partition.n_clients,
        cfg.run.rounds,
        labels.join(", ")
    )?;
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut impl Write) -> anyhow::Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Compare(a) => cmd_compare(a, out),
        Command::Presets { name } => cmd_presets(name.as_deref(), out),
        Command::Validate(s) => cmd_validate(s, out),
    }
}
