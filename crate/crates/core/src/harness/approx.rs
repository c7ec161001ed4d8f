use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::manifest;
use super::write_csv;
use crate::datasets::{LabeledSample, Sample};
use crate::error::{Error, Result};
use crate::goals::{Goal, GoalKind};
use crate::influence::{build_engine, resolve_joint, RetrainOracle, SolverConfig};
use crate::model::{lambda_from_C, train, TrainConfig};
use crate::operators::{resolve, LabelResolver};
use crate::stats::{pearson, spearman};

/// A trained model's neighbourhood: `n` labelled samples, a candidate pool
/// with hidden labels, and an optional held-out dev set.
#[derive(Debug, Clone)]
pub struct UtilityBench {
    pub train: Vec<LabeledSample<f64>>,
    pub pool: Vec<Sample<f64>>,
    pub pool_labels: Vec<usize>,
    pub dev: Vec<LabeledSample<f64>>,
    pub num_classes: usize,
    pub lambda: f64,
    pub grad_tol: f64,
    pub solver: SolverConfig<f64>,
}

impl UtilityBench {
    /// Shuffles `data` with `seed` and carves train, pool and dev in order.
    #[allow(non_snake_case)]
    pub fn from_data(
        data: &[LabeledSample<f64>],
        num_classes: usize,
        n_train: usize,
        pool_size: usize,
        dev_size: usize,
        C: f64,
        seed: u64,
    ) -> Result<Self> {
        let need = n_train + pool_size + dev_size;
        if data.len() < need {
            return Err(Error::InsufficientData(format!(
                "need {need} samples (train {n_train} + pool {pool_size} + dev {dev_size}), have {}",
                data.len()
            )));
        }
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let take = |r: std::ops::Range<usize>| -> Vec<LabeledSample<f64>> { idx[r].iter().map(|&i| data[i].clone()).collect() };
        let train = take(0..n_train);
        let pool_l = take(n_train..n_train + pool_size);
        let dev = take(n_train + pool_size..need);
        Ok(Self {
            lambda: lambda_from_C(C, train.len())?,
            train,
            pool: pool_l.iter().map(|z| z.sample.clone()).collect(),
            pool_labels: pool_l.iter().map(|z| z.label).collect(),
            dev,
            num_classes,
            grad_tol: 1e-10,
            solver: SolverConfig::default(),
        })
    }

    pub fn goal(&self, kind: GoalKind) -> Result<Goal<f64>> {
        match kind {
            GoalKind::Dev => Goal::dev(self.dev.clone()),
            GoalKind::Ent => Goal::ent(self.pool.clone()),
            GoalKind::Fir => Goal::fir(self.pool.clone(), self.lambda),
        }
    }

    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig::new(self.lambda).with_grad_tol(self.grad_tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub mode: &'static str,
    pub resolver: String,
    pub id_or_window_start: usize,
    pub exact: f64,
    pub approx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub mode: &'static str,
    pub resolver: String,
    pub n: usize,
    /// `None` when either column is constant.
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    pub approx_spread: f64,
}

/// Exact (retrained) and approximate utilities for every pool sample and,
/// when `batch` is set, every sliding window of that size.
pub fn approx_quality(
    bench: &UtilityBench,
    goal_kind: GoalKind,
    resolvers: &[LabelResolver<f64>],
    batch: Option<usize>,
) -> Result<Vec<ScatterRow>> {
    let k = bench.num_classes;
    let cfg = bench.train_config();
    let model = train(&bench.train, k, &cfg)?;
    let goal = bench.goal(goal_kind)?;
    let engine = build_engine(&model, &bench.train, bench.lambda, &goal, bench.solver)?;
    let oracle = RetrainOracle::new(&bench.train, k, &model, &cfg, &goal)?;
    let probs = bench
        .pool
        .iter()
        .map(|x| model.predict_proba(&x.features))
        .collect::<Result<Vec<_>>>()?;

    let exact_rows = bench
        .pool
        .par_iter()
        .map(|x| oracle.label_utilities(&x.features))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for r in resolvers {
        for (i, x) in bench.pool.iter().enumerate() {
            let y = bench.pool_labels[i];
            let dist = r.distribution(&probs[i], x.id)?;
            rows.push(ScatterRow {
                mode: "serial",
                resolver: r.to_string(),
                id_or_window_start: x.id,
                exact: resolve(&exact_rows[i], r, dist.as_deref(), Some(y))?,
                approx: engine.approx_utility(x, r, Some(y))?,
            });
        }
    }

    if let Some(b) = batch {
        if b == 0 || b > bench.pool.len() {
            return Err(Error::InvalidArgument(format!("window size {b} for a pool of {}", bench.pool.len())));
        }
        let starts: Vec<usize> = (0..=bench.pool.len() - b).collect();
        let per_window = starts
            .par_iter()
            .map(|&s| {
                let window = &bench.pool[s..s + b];
                let labels = &bench.pool_labels[s..s + b];
                let joint = oracle.joint_label_utilities(window)?;
                resolvers
                    .iter()
                    .map(|r| {
                        let exact = match r {
                            LabelResolver::Oracle => {
                                joint
                                    .iter()
                                    .find(|(l, _)| l.as_slice() == labels)
                                    .expect("enumeration covers every labeling")
                                    .1
                            }
                            _ => resolve_joint(&joint, window, r, &probs[s..s + b])?,
                        };
                        Ok(ScatterRow {
                            mode: "batch",
                            resolver: r.to_string(),
                            id_or_window_start: s,
                            exact,
                            approx: engine.approx_batch_utility(window, r, Some(labels))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (ri, _) in resolvers.iter().enumerate() {
            rows.extend(per_window.iter().map(|w| w[ri].clone()));
        }
    }
    Ok(rows)
}

/// Spearman and Pearson of exact vs approx per (mode, resolver), in order
/// of first appearance.
pub fn correlations(rows: &[ScatterRow]) -> Vec<Correlation> {
    let mut keys: Vec<(&'static str, &str)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(m, s)| m == r.mode && s == r.resolver) {
            keys.push((r.mode, &r.resolver));
        }
    }
    keys.into_iter()
        .map(|(mode, resolver)| {
            let (ex, ap): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.mode == mode && r.resolver == resolver)
                .map(|r| (r.exact, r.approx))
                .unzip();
            let spread = ap.iter().copied().fold(f64::NEG_INFINITY, f64::max) - ap.iter().copied().fold(f64::INFINITY, f64::min);
            Correlation {
                mode,
                resolver: resolver.to_string(),
                n: ex.len(),
                spearman: spearman(&ex, &ap).ok(),
                pearson: pearson(&ex, &ap).ok(),
                approx_spread: spread,
            }
        })
        .collect()
}

/// `approx-check`: scatter.csv plus per-resolver correlations in
/// approx_summary.json. Uses the first seed.
pub fn cmd_approx_check(cfg: &ExperimentConfig, out: &Path, seeds: &[u64]) -> Result<Vec<ScatterRow>> {
    cfg.validate()?;
    let seed = *seeds.first().ok_or_else(|| Error::Config("no seed given".into()))?;
    let data = cfg.dataset.load()?;
    let a = &cfg.approx;
    let dev_size = if a.goal == GoalKind::Dev { a.dev_size } else { 0 };
    let mut bench = UtilityBench::from_data(&data.samples, data.num_classes, a.n_train, a.pool_size, dev_size, cfg.C, seed)?;
    bench.solver.residual_tol = cfg.train.cg_tol;
    let rows = approx_quality(&bench, a.goal, &cfg.approx_resolvers()?, a.batch.then_some(a.b))?;

    fs::create_dir_all(out)?;
    write_csv(
        out.join("scatter.csv"),
        ["mode", "resolver", "id_or_window_start", "exact", "approx"],
        &rows,
    )?;
    let summary = manifest("approx-check", cfg, seeds, correlations(&rows));
    fs::write(out.join("approx_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(rows)
}
