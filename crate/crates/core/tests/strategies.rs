mod common;

use std::collections::BTreeSet;

use common::*;
use goral::datasets::{generate_synth2, sample_dev_set, split_al_instance, GaussianMixture, LabeledSample, SplitSizes};
use goral::goals::{Goal, GoalKind};
use goral::influence::{build_engine, RetrainOracle, SolverConfig};
use goral::model::{lambda_from_C, train, TrainConfig};
use goral::operators::LabelResolver;
use goral::strategies::{run_al_loop, select_batch, LoopConfig, Strategy};
use proptest::prelude::*;

fn exhaustive_best(u: &[f64], b: usize) -> f64 {
    let n = u.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == b {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| u[i]).sum();
            best = best.max(s);
        }
    }
    best
}

proptest! {
    #[test]
    fn select_batch_matches_exhaustive(u in prop::collection::vec(-10.0f64..10.0, 6..=8), b in 2usize..=3) {
        let picked = select_batch(&u, b).unwrap();
        prop_assert_eq!(picked.len(), b);
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        let s: f64 = picked.iter().map(|&i| u[i]).sum();
        prop_assert!((s - exhaustive_best(&u, b)).abs() < 1e-12);
    }
}

#[test]
fn select_batch_edges() {
    assert_eq!(select_batch(&[1.0, 3.0, 3.0, 2.0], 2).unwrap(), vec![1, 2]);
    assert_eq!(select_batch(&[1.0, 1.0, 1.0], 1).unwrap(), vec![0]);
    assert_eq!(select_batch(&[f64::NAN, 0.5, -1.0], 2).unwrap(), vec![1, 2]);
    assert!(select_batch(&[1.0], 2).is_err());
    assert!(select_batch::<f64>(&[], 0).unwrap().is_empty());
}

fn small_instance(seed: u64) -> goral::AlInstance {
    let data = GaussianMixture { n: 260, dim: 3, num_classes: 3, separation: 1.5, noise: 1.0, seed }.generate::<f64>();
    split_al_instance(&data.samples, 3, SplitSizes { n_init: 6, n_test: 100 }, seed, true).unwrap()
}

#[test]
fn no_id_is_queried_twice_and_runs_are_deterministic() {
    let inst = small_instance(1);
    let dev = sample_dev_set(&inst, 0.1, 1).unwrap();
    for s in ["random", "uncertainty", "goral:ent:max", "goral:fir:expectation:uniform", "goral:dev:oracle"] {
        let strategy: Strategy<f64> = s.parse().unwrap();
        let cfg = LoopConfig { seed: 3, ..LoopConfig::default() };
        let h = run_al_loop(&dev, &strategy, 5, 6, 0.1, &cfg).unwrap();
        let ids = h.queried_ids();
        assert_eq!(ids.len(), 30);
        assert_eq!(ids.iter().collect::<BTreeSet<_>>().len(), 30, "{s}");
        assert_eq!(h.records.len(), 7);
        assert!(h.records.windows(2).all(|w| w[1].n_labeled == w[0].n_labeled + 5));
        assert!(h.records.last().unwrap().queried_ids.is_empty());
        let again = run_al_loop(&dev, &strategy, 5, 6, 0.1, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&h).unwrap(), serde_json::to_string(&again).unwrap());
    }
}

#[test]
fn lambda_follows_the_labelled_count() {
    let inst = small_instance(2);
    let h = run_al_loop(&inst, &Strategy::Random, 4, 3, 0.5, &LoopConfig::default()).unwrap();
    for r in &h.records {
        assert!((r.lambda - 1.0 / (r.n_labeled as f64 * 0.5)).abs() < 1e-15);
    }
}

#[test]
fn budget_beyond_pool_is_rejected() {
    let inst = small_instance(3);
    assert!(run_al_loop(&inst, &Strategy::Random, 100, 10, 0.1, &LoopConfig::default()).is_err());
    assert!(run_al_loop(&inst, &Strategy::Random, 0, 1, 0.1, &LoopConfig::default()).is_err());
    // A dev goal without a dev set.
    let s: Strategy<f64> = "goral:dev:min".parse().unwrap();
    assert!(run_al_loop(&inst, &s, 2, 1, 0.1, &LoopConfig::default()).is_err());
}

#[test]
fn exact_and_approx_selection_mostly_agree() {
    let mut iterations = 0;
    let mut disagreements = 0;
    for seed in 0..6u64 {
        let mut r = rng(seed);
        let k = 2;
        let mut labeled = random_labeled_set(&mut r, 100, 2, k);
        let dev = Goal::dev(random_labeled_set(&mut rng(seed + 100), 40, 2, k)).unwrap();
        let candidates = random_labeled_set(&mut rng(seed + 200), 30, 2, k);
        let mut remaining: Vec<usize> = (0..30).collect();
        for _ in 0..10 {
            let lambda = lambda_from_C(0.1, labeled.len()).unwrap();
            let cfg = TrainConfig::new(lambda).with_grad_tol(1e-11);
            let model = train(&labeled, k, &cfg).unwrap();
            let engine = build_engine(&model, &labeled, lambda, &dev, SolverConfig::default()).unwrap();
            let oracle = RetrainOracle::new(&labeled, k, &model, &cfg, &dev).unwrap();
            let (mut approx, mut exact) = (Vec::new(), Vec::new());
            for &i in &remaining {
                let z = &candidates[i];
                let p = model.predict_proba(z.features()).unwrap();
                approx.push(engine.approx_utility(&z.sample, &LabelResolver::Oracle, Some(z.label)).unwrap());
                exact.push(oracle.utility(&z.sample, &LabelResolver::Oracle, &p, Some(z.label)).unwrap());
            }
            let a = select_batch(&approx, 1).unwrap()[0];
            let e = select_batch(&exact, 1).unwrap()[0];
            iterations += 1;
            disagreements += usize::from(a != e);
            labeled.push(candidates[remaining.remove(a)].clone());
        }
    }
    let rate = disagreements as f64 / iterations as f64;
    println!("exact vs approx selection disagreement: {disagreements}/{iterations}");
    assert!(rate <= 0.2, "disagreement rate {rate}");
}

#[test]
fn oracle_dev_goal_is_softly_monotone_on_synth2() {
    let mut steps = 0;
    let mut up = 0;
    for seed in 0..3u64 {
        let inst = sample_dev_set(&generate_synth2::<f64>(seed), 0.1, seed).unwrap();
        let s: Strategy<f64> = "goral:dev:oracle".parse().unwrap();
        let cfg = LoopConfig { seed, ..LoopConfig::default() };
        let h = run_al_loop(&inst, &s, 10, 10, 0.1, &cfg).unwrap();
        let g: Vec<f64> = h.records.iter().map(|r| r.goal_value.unwrap()).collect();
        steps += g.len() - 1;
        up += g.windows(2).filter(|w| w[1] >= w[0]).count();
    }
    println!("non-decreasing goal steps: {up}/{steps}");
    assert!(up as f64 >= 0.8 * steps as f64);
}

#[test]
fn tracked_goal_is_recorded_for_baselines() {
    let inst = small_instance(4);
    let cfg = LoopConfig { track_goal: Some(GoalKind::Ent), ..LoopConfig::default() };
    let h = run_al_loop(&inst, &Strategy::Random, 3, 2, 0.1, &cfg).unwrap();
    assert!(h.records.iter().all(|r| r.goal_value.is_some()));
    let h = run_al_loop(&inst, &Strategy::Random, 3, 2, 0.1, &LoopConfig::default()).unwrap();
    assert!(h.records.iter().all(|r| r.goal_value.is_none()));
}

#[test]
fn queried_samples_carry_their_hidden_labels() {
    let inst = small_instance(5);
    let h = run_al_loop(&inst, &Strategy::Uncertainty, 5, 2, 0.1, &LoopConfig::default()).unwrap();
    let labelled: Vec<LabeledSample<f64>> = h.queried_ids().iter().map(|&id| {
        let i = inst.pool.iter().position(|x| x.id == id).unwrap();
        inst.reveal(i)
    }).collect();
    assert!(labelled.iter().all(|z| z.label < 3));
}
