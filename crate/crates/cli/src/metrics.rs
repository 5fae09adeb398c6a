//! CSV and JSON outputs of an experiment log. Reals are written with six
//! decimals so identical logs give identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use feddrl::orchestrator::{sliding_avg_reward, ExperimentLog};
use serde::Serialize;
use thiserror::Error;

use crate::config::Format;

/// Window of the `sliding_avg` column.
pub const REWARD_WINDOW: usize = 100;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot write {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot encode summary: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] feddrl::Error),
}

fn f6(x: f64) -> String {
    // Avoid "-0.000000".
    let s = format!("{x:.6}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn round6(x: f64) -> f64 {
    f6(x).parse().unwrap_or(x)
}

pub fn mask_string(mask: &[bool]) -> String {
    mask.iter().map(|&m| if m { '1' } else { '0' }).collect()
}

pub fn rounds_csv(log: &ExperimentLog) -> String {
    let n = log.sample_counts.len();
    let mut out = String::from("round,strategy,global_acc");
    for i in 1..=n {
        let _ = write!(out, ",client_{i}_acc");
    }
    out.push_str(",mask,weights\n");
    for r in &log.rounds {
        let _ = write!(out, "{},{},{}", r.round, log.strategy(), f6(r.global_acc));
        for a in &r.client_accs {
            let _ = write!(out, ",{}", f6(*a));
        }
        let weights: Vec<String> = r.fusion_weights.iter().map(|&w| f6(w)).collect();
        let _ = writeln!(out, ",{},{}", mask_string(&r.selected_mask), weights.join(";"));
    }
    out
}

pub fn rewards_csv(rewards: &[f64]) -> Result<String, MetricsError> {
    let avg = sliding_avg_reward(rewards, REWARD_WINDOW)?;
    let mut out = String::from("iter,raw_reward,sliding_avg\n");
    for (i, (r, a)) in rewards.iter().zip(&avg).enumerate() {
        let _ = writeln!(out, "{},{},{}", i + 1, f6(*r), f6(*a));
    }
    Ok(out)
}

pub fn clients_csv(log: &ExperimentLog) -> String {
    let mut out = String::from("client,sample_count,behavior\n");
    for (i, c) in log.sample_counts.iter().enumerate() {
        let id = i + 1;
        let behavior = log
            .config
            .world
            .behaviors
            .iter()
            .find(|(b, _)| *b == id)
            .map_or("honest", |(_, b)| b.short_name());
        let _ = writeln!(out, "{id},{c},{behavior}");
    }
    out
}

#[derive(Debug, Serialize)]
struct Summary {
    strategy: &'static str,
    seed: u64,
    rounds: usize,
    n_clients: usize,
    final_global_acc: Option<f64>,
    best_global_acc: Option<f64>,
    final_client_accs: Vec<f64>,
    final_mask: String,
    final_weights: Vec<f64>,
    sample_counts: Vec<usize>,
    stage1_iterations: usize,
    stage2_iterations: usize,
    low_quality_band_warnings: usize,
}

pub fn summary_json(log: &ExperimentLog) -> Result<String, MetricsError> {
    let last = log.rounds.last();
    let summary = Summary {
        strategy: log.strategy(),
        seed: log.config.seed,
        rounds: log.rounds.len(),
        n_clients: log.sample_counts.len(),
        final_global_acc: last.map(|r| round6(r.global_acc)),
        best_global_acc: log
            .rounds
            .iter()
            .map(|r| r.global_acc)
            .reduce(f64::max)
            .map(round6),
        final_client_accs: last.map_or_else(Vec::new, |r| r.client_accs.iter().map(|&a| round6(a)).collect()),
        final_mask: last.map_or_else(String::new, |r| mask_string(&r.selected_mask)),
        final_weights: last.map_or_else(Vec::new, |r| r.fusion_weights.iter().map(|&w| round6(w)).collect()),
        sample_counts: log.sample_counts.clone(),
        stage1_iterations: log.stage1_rewards.len(),
        stage2_iterations: log.stage2_rewards.len(),
        low_quality_band_warnings: log.warnings.len(),
    };
    let mut s = serde_json::to_string_pretty(&summary)?;
    s.push('\n');
    Ok(s)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, MetricsError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| MetricsError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes the requested formats into `dir`, creating it if needed, and
/// returns the written paths.
pub fn emit_metrics(log: &ExperimentLog, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>, MetricsError> {
    std::fs::create_dir_all(dir).map_err(|source| MetricsError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    if formats.contains(&Format::Csv) {
        written.push(write(dir, "rounds.csv", &rounds_csv(log))?);
        written.push(write(dir, "rewards.csv", &rewards_csv(&log.stage1_rewards)?)?);
        written.push(write(dir, "rewards_stage2.csv", &rewards_csv(&log.stage2_rewards)?)?);
        written.push(write(dir, "clients.csv", &clients_csv(log))?);
    }
    if formats.contains(&Format::Json) {
        written.push(write(dir, "summary.json", &summary_json(log)?)?);
    }
    Ok(written)
}
