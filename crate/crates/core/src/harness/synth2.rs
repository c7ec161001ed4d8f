use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::{manifest, write_curves};
use super::write_csv;
use crate::datasets::{generate_synth2, sample_dev_set, synth2_cluster_of, AlInstance, ClusterGroup};
use crate::error::{Error, Result};
use crate::strategies::{run_al_loop, AlHistory, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRow {
    pub strategy: String,
    pub seed: u64,
    pub iter: usize,
    pub id: usize,
    pub x1: f64,
    pub x2: f64,
    pub label: usize,
    pub cluster: ClusterGroup,
    pub in_dev: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategySummary {
    pub strategy: String,
    /// Per seed; `None` when the target was never reached.
    pub queries_to_target: Vec<Option<usize>>,
    /// `None` when at least half the seeds never reached the target.
    pub median_queries_to_target: Option<f64>,
    /// Share of each seed's first 50 queries that fall in central clusters,
    /// pooled over seeds.
    pub central_rate_first_50: f64,
    /// Distracting-cluster points in the first batch, per seed.
    pub first_batch_distracting: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Synth2Study {
    pub seeds: Vec<u64>,
    pub instances: Vec<AlInstance<f64>>,
    /// `(strategy, one history per seed)`
    pub runs: Vec<(String, Vec<AlHistory<f64>>)>,
}

impl Synth2Study {
    fn locate(&self, seed_index: usize) -> HashMap<usize, usize> {
        self.instances[seed_index]
            .pool
            .iter()
            .enumerate()
            .map(|(i, x)| (x.id, i))
            .collect()
    }

    pub fn query_rows(&self) -> Vec<QueryRow> {
        let mut rows = Vec::new();
        for (name, histories) in &self.runs {
            for (si, h) in histories.iter().enumerate() {
                let inst = &self.instances[si];
                let at = self.locate(si);
                let dev: Vec<usize> = inst.dev.iter().flatten().map(|z| z.id()).collect();
                for r in &h.records {
                    for &id in &r.queried_ids {
                        let i = at[&id];
                        let x = &inst.pool[i].features;
                        rows.push(QueryRow {
                            strategy: name.clone(),
                            seed: self.seeds[si],
                            iter: r.iteration,
                            id,
                            x1: x[0],
                            x2: x[1],
                            label: inst.hidden_pool_labels[i],
                            cluster: synth2_cluster_of(x).group,
                            in_dev: dev.contains(&id),
                        });
                    }
                }
            }
        }
        rows
    }

    pub fn summary(&self, target: f64) -> Vec<StrategySummary> {
        let rows = self.query_rows();
        self.runs
            .iter()
            .map(|(name, histories)| {
                let q: Vec<Option<usize>> = histories.iter().map(|h| h.queries_to_accuracy(target)).collect();
                let mut sorted: Vec<f64> = q.iter().map(|v| v.map_or(f64::INFINITY, |v| v as f64)).collect();
                sorted.sort_by(f64::total_cmp);
                let m = sorted.len() / 2;
                let median = if sorted.len() % 2 == 1 {
                    sorted[m]
                } else {
                    (sorted[m - 1] + sorted[m]) / 2.0
                };
                let (mut central, mut total) = (0usize, 0usize);
                let mut first_batch = Vec::new();
                for &seed in &self.seeds {
                    let mine: Vec<&QueryRow> = rows.iter().filter(|r| &r.strategy == name && r.seed == seed).collect();
                    let first50 = &mine[..mine.len().min(50)];
                    total += first50.len();
                    central += first50.iter().filter(|r| r.cluster == ClusterGroup::Central).count();
                    first_batch.push(
                        mine.iter()
                            .filter(|r| r.iter == 0 && r.cluster == ClusterGroup::Distracting)
                            .count(),
                    );
                }
                StrategySummary {
                    strategy: name.clone(),
                    queries_to_target: q,
                    median_queries_to_target: median.is_finite().then_some(median),
                    central_rate_first_50: if total == 0 { 0.0 } else { central as f64 / total as f64 },
                    first_batch_distracting: first_batch,
                }
            })
            .collect()
    }
}

/// Runs every configured strategy on synth2 for each seed. The dataset
/// field of `cfg` is ignored; `b`, `budget`, `C` and the training settings
/// apply.
pub fn synth2_study(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Synth2Study> {
    if seeds.is_empty() {
        return Err(Error::Config("no seed given".into()));
    }
    let instances = seeds
        .iter()
        .map(|&s| sample_dev_set(&generate_synth2(s), cfg.synth2.dev_fraction, s))
        .collect::<Result<Vec<_>>>()?;
    let strategies = cfg
        .synth2
        .strategies
        .iter()
        .map(|s| s.parse::<Strategy<f64>>())
        .collect::<Result<Vec<_>>>()?;
    let runs = strategies
        .iter()
        .map(|st| {
            let hs = seeds
                .par_iter()
                .zip(&instances)
                .map(|(&seed, inst)| run_al_loop(inst, st, cfg.b, cfg.budget, cfg.C, &cfg.loop_config(seed, false)))
                .collect::<Result<Vec<_>>>()?;
            Ok((st.to_string(), hs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Synth2Study {
        seeds: seeds.to_vec(),
        instances,
        runs,
    })
}

/// `synth2`: queries.csv with cluster tags, per-strategy curves under
/// `<out>/<strategy>/`, and synth2_summary.json.
pub fn cmd_synth2(cfg: &ExperimentConfig, out: &Path, seeds: &[u64]) -> Result<Synth2Study> {
    cfg.validate()?;
    let study = synth2_study(cfg, seeds)?;
    fs::create_dir_all(out)?;
    write_csv(
        out.join("queries.csv"),
        ["strategy", "seed", "iter", "id", "x1", "x2", "label", "cluster", "in_dev"],
        &study.query_rows(),
    )?;
    for (name, histories) in &study.runs {
        write_curves(&out.join(name.replace(':', "_")), seeds, histories)?;
    }
    let summary = manifest("synth2", cfg, seeds, study.summary(cfg.synth2.target_accuracy));
    fs::write(out.join("synth2_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(study)
}
