use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::approx::UtilityBench;
use super::config::ExperimentConfig;
use super::run::manifest;
use super::write_csv;
use crate::datasets::Sample;
use crate::error::{Error, Result};
use crate::goals::GoalKind;
use crate::influence::{resolve_joint, RetrainOracle};
use crate::model::train;
use crate::operators::LabelResolver;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistRow {
    pub goal: GoalKind,
    pub resolver: String,
    pub b: usize,
    pub value: f64,
}

/// Exact batch utilities of `samples` random pool batches of size `b`,
/// one row per (resolver, batch).
pub fn exact_utility_samples(
    bench: &UtilityBench,
    goal_kind: GoalKind,
    resolvers: &[LabelResolver<f64>],
    b: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<HistRow>> {
    if b == 0 || b > bench.pool.len() {
        return Err(Error::InvalidArgument(format!("batch size {b} for a pool of {}", bench.pool.len())));
    }
    let k = bench.num_classes;
    let cfg = bench.train_config();
    let model = train(&bench.train, k, &cfg)?;
    let goal = bench.goal(goal_kind)?;
    let oracle = RetrainOracle::new(&bench.train, k, &model, &cfg, &goal)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches: Vec<Vec<usize>> = (0..samples)
        .map(|_| {
            let mut idx = rand::seq::index::sample(&mut rng, bench.pool.len(), b).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();
    let per_batch = batches
        .par_iter()
        .map(|idx| {
            let batch: Vec<Sample<f64>> = idx.iter().map(|&i| bench.pool[i].clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| bench.pool_labels[i]).collect();
            let probs = batch
                .iter()
                .map(|x| model.predict_proba(&x.features))
                .collect::<Result<Vec<_>>>()?;
            let joint = oracle.joint_label_utilities(&batch)?;
            resolvers
                .iter()
                .map(|r| match r {
                    LabelResolver::Oracle => Ok(joint
                        .iter()
                        .find(|(l, _)| *l == labels)
                        .expect("enumeration covers every labeling")
                        .1),
                    _ => resolve_joint(&joint, &batch, r, &probs),
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(samples * resolvers.len());
    for (ri, r) in resolvers.iter().enumerate() {
        rows.extend(per_batch.iter().map(|v| HistRow {
            goal: goal_kind,
            resolver: r.to_string(),
            b,
            value: v[ri],
        }));
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct Spread {
    goal: GoalKind,
    resolver: String,
    b: usize,
    min: f64,
    max: f64,
}

/// `util-hist`: histograms.csv with exact utilities for `ent` at each of
/// `ent_batch_sizes` and `fir` at each of `fir_batch_sizes`.
pub fn cmd_util_hist(cfg: &ExperimentConfig, out: &Path, seeds: &[u64]) -> Result<Vec<HistRow>> {
    cfg.validate()?;
    let seed = *seeds.first().ok_or_else(|| Error::Config("no seed given".into()))?;
    let data = cfg.dataset.load()?;
    let h = &cfg.hist;
    let mut bench = UtilityBench::from_data(&data.samples, data.num_classes, h.n_train, h.pool_size, 0, cfg.C, seed)?;
    bench.solver.residual_tol = cfg.train.cg_tol;
    let resolvers = cfg.hist_resolvers()?;

    let mut rows = Vec::new();
    let plan = h
        .ent_batch_sizes
        .iter()
        .map(|&b| (GoalKind::Ent, b))
        .chain(h.fir_batch_sizes.iter().map(|&b| (GoalKind::Fir, b)));
    for (i, (goal, b)) in plan.enumerate() {
        rows.extend(exact_utility_samples(&bench, goal, &resolvers, b, h.samples, seed.wrapping_add(i as u64))?);
    }

    fs::create_dir_all(out)?;
    write_csv(out.join("histograms.csv"), ["goal", "resolver", "b", "value"], &rows)?;
    let mut spreads: Vec<Spread> = Vec::new();
    for r in &rows {
        match spreads
            .iter_mut()
            .find(|s| s.goal == r.goal && s.resolver == r.resolver && s.b == r.b)
        {
            Some(s) => {
                s.min = s.min.min(r.value);
                s.max = s.max.max(r.value);
            }
            None => spreads.push(Spread {
                goal: r.goal,
                resolver: r.resolver.clone(),
                b: r.b,
                min: r.value,
                max: r.value,
            }),
        }
    }
    let summary = manifest("util-hist", cfg, seeds, spreads);
    fs::write(out.join("hist_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(rows)
}
