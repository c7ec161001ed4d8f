use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::write_csv;
use crate::error::Result;
use crate::strategies::{run_al_loop, AlHistory, Strategy};

#[derive(Debug, Serialize)]
struct CurveRow {
    seed: u64,
    iter: usize,
    n_labeled: usize,
    test_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct GoalRow {
    seed: u64,
    iter: usize,
    goal_value: f64,
}

#[derive(Debug, Serialize)]
struct UtilityRow {
    seed: u64,
    id: usize,
    utility: f64,
}

#[derive(Debug, Serialize)]
pub(crate) struct Manifest<'a, H: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a ExperimentConfig,
    pub seeds: &'a [u64],
    pub results: H,
}

#[derive(Debug, Serialize)]
struct SeedHistory<'a> {
    seed: u64,
    history: &'a AlHistory<f64>,
}

pub(crate) fn manifest<'a, H: Serialize>(
    command: &'static str,
    config: &'a ExperimentConfig,
    seeds: &'a [u64],
    histories: H,
) -> Manifest<'a, H> {
    Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        seeds,
        results: histories,
    }
}

/// Runs one strategy for every seed, in parallel, in seed order.
pub fn run_seeds(
    cfg: &ExperimentConfig,
    strategy: &Strategy<f64>,
    seeds: &[u64],
    snapshot_utilities: bool,
) -> Result<Vec<AlHistory<f64>>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let inst = cfg.instance(seed)?;
            run_al_loop(&inst, strategy, cfg.b, cfg.budget, cfg.C, &cfg.loop_config(seed, snapshot_utilities))
        })
        .collect()
}

/// Writes learning, goal and utility-snapshot curves for a set of runs.
pub fn write_curves(out: &Path, seeds: &[u64], histories: &[AlHistory<f64>]) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut curve = Vec::new();
    let mut goal = Vec::new();
    let mut snapshots: BTreeMap<usize, Vec<UtilityRow>> = BTreeMap::new();
    for (&seed, h) in seeds.iter().zip(histories) {
        for r in &h.records {
            curve.push(CurveRow {
                seed,
                iter: r.iteration,
                n_labeled: r.n_labeled,
                test_accuracy: r.test_accuracy,
            });
            if let Some(g) = r.goal_value {
                goal.push(GoalRow {
                    seed,
                    iter: r.iteration,
                    goal_value: g,
                });
            }
            if let Some(u) = &r.utilities {
                snapshots
                    .entry(r.iteration)
                    .or_default()
                    .extend(u.iter().map(|&(id, utility)| UtilityRow { seed, id, utility }));
            }
        }
    }
    write_csv(out.join("learning_curve.csv"), ["seed", "iter", "n_labeled", "test_accuracy"], &curve)?;
    write_csv(out.join("goal_curve.csv"), ["seed", "iter", "goal_value"], &goal)?;
    for (t, rows) in snapshots {
        write_csv(out.join(format!("util_distrib_{t}.csv")), ["seed", "id", "utility"], &rows)?;
    }
    Ok(())
}

/// `run`: learning_curve.csv, goal_curve.csv, optional util_distrib_<t>.csv
/// snapshots and a history.json manifest.
pub fn cmd_run(
    cfg: &ExperimentConfig,
    out: &Path,
    seeds: &[u64],
    snapshot_utilities: bool,
) -> Result<Vec<AlHistory<f64>>> {
    cfg.validate()?;
    let strategy = cfg.strategy()?;
    let histories = run_seeds(cfg, &strategy, seeds, snapshot_utilities)?;
    write_curves(out, seeds, &histories)?;
    let runs: Vec<SeedHistory> = seeds
        .iter()
        .zip(&histories)
        .map(|(&seed, history)| SeedHistory { seed, history })
        .collect();
    let m = manifest("run", cfg, seeds, runs);
    fs::write(out.join("history.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(histories)
}
