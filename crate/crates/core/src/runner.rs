//! Repeated runs with derived seeds and their on-disk outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::engine::{run_experiment, ExperimentOutcome};
use crate::error::{Error, Result};
use crate::metrics::{mean_std, sig9, write_outputs};

/// Environment variable consulted when the config names no output directory.
pub const OUTPUT_DIR_ENV: &str = "SIM_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "sim-output";

pub fn resolve_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var(OUTPUT_DIR_ENV).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| DEFAULT_OUTPUT_DIR.to_string())
        .into()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateSummary {
    pub strategy: String,
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub final_mean_acc: Vec<f64>,
    pub final_mean_acc_mean: f64,
    pub final_mean_acc_std: f64,
    pub final_fairness_std: Vec<f64>,
}

/// Config for repeat `i`: seed `master_seed + i`, a single repeat.
pub fn repeat_config(cfg: &ExperimentConfig, i: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.master_seed = cfg.master_seed.wrapping_add(i as u64);
    c.repeats = 1;
    c
}

pub fn repeat_dir(out: &Path, i: usize) -> PathBuf {
    out.join(format!("repeat-{i}"))
}

fn run_all(cfg: &ExperimentConfig, out: &Path, created: &mut Vec<PathBuf>) -> Result<AggregateSummary> {
    let mut outcomes: Vec<(u64, ExperimentOutcome)> = Vec::with_capacity(cfg.repeats);
    for i in 0..cfg.repeats {
        let rc = repeat_config(cfg, i);
        let outcome = run_experiment(&rc)?;
        let dir = repeat_dir(out, i);
        if dir.exists() {
            created.extend([dir.join("rounds.csv"), dir.join("summary.json")]);
        } else {
            created.push(dir.clone());
        }
        write_outputs(&outcome.records, &rc.echo(), Some(&outcome.evaluation), &dir)?;
        outcomes.push((rc.master_seed, outcome));
    }
    let finals: Vec<f64> = outcomes.iter().map(|(_, o)| o.mean_personalized_acc()).collect();
    let (m, s) = mean_std(&finals);
    let summary = AggregateSummary {
        strategy: cfg.strategy_kind().name().to_string(),
        repeats: cfg.repeats,
        seeds: outcomes.iter().map(|(s, _)| *s).collect(),
        final_mean_acc: finals.iter().map(|&x| sig9(x)).collect(),
        final_mean_acc_mean: sig9(m),
        final_mean_acc_std: sig9(s),
        final_fairness_std: outcomes
            .iter()
            .map(|(_, o)| sig9(mean_std(&o.evaluation.personalized_acc).1))
            .collect(),
    };
    let path = out.join("aggregate.json");
    created.push(path.clone());
    let mut bytes = serde_json::to_vec_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Executes `cfg.repeats` runs into `out`. On failure every file this call
/// created is removed before the error is returned.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<AggregateSummary> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut created = Vec::new();
    let result = run_all(cfg, out, &mut created);
    if result.is_err() {
        for p in created.iter().rev() {
            let _ = if p.is_dir() {
                fs::remove_dir_all(p)
            } else {
                fs::remove_file(p)
            };
        }
    }
    result
}
