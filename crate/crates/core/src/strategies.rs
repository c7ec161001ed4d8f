//! Query strategies and the pool-based active-learning loop.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::datasets::{AlInstance, LabeledSample, Sample};
use crate::error::{Error, Result};
use crate::goals::{entropy, Goal, GoalFunction, GoalKind};
use crate::influence::{build_engine, InfluenceEngine, SolverConfig};
use crate::model::{accuracy, lambda_from_C, train_with_report, ModelParams, TrainConfig};
use crate::operators::LabelResolver;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy<T> {
    /// Uniform random scores from a seeded stream.
    Random,
    /// Prediction entropy.
    Uncertainty,
    /// Influence-approximated goal-oriented utility.
    Goral { goal: GoalKind, resolver: LabelResolver<T> },
}

impl<T: Scalar> Strategy<T> {
    pub fn goal(&self) -> Option<GoalKind> {
        match self {
            Strategy::Goral { goal, .. } => Some(*goal),
            _ => None,
        }
    }
}

impl<T: Scalar> fmt::Display for Strategy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Random => f.write_str("random"),
            Strategy::Uncertainty => f.write_str("uncertainty"),
            Strategy::Goral { goal, resolver } => write!(f, "goral:{goal}:{resolver}"),
        }
    }
}

impl<T: Scalar> FromStr for Strategy<T> {
    type Err = Error;

    /// `random`, `uncertainty`, or `goral:<goal>:<resolver>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => return Ok(Strategy::Random),
            "uncertainty" => return Ok(Strategy::Uncertainty),
            _ => {}
        }
        let rest = s
            .strip_prefix("goral:")
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))?;
        let (goal, resolver) = rest
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("strategy {s:?} needs goral:<goal>:<resolver>")))?;
        Ok(Strategy::Goral {
            goal: goal.parse()?,
            resolver: resolver.parse()?,
        })
    }
}

/// Scores every pool sample; higher is more worth querying.
pub fn score_pool<T: Scalar>(
    strategy: &Strategy<T>,
    model: &ModelParams<T>,
    engine: Option<&InfluenceEngine<T>>,
    pool: &[Sample<T>],
    hidden_labels: Option<&[usize]>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<T>> {
    match strategy {
        Strategy::Random => Ok(pool.iter().map(|_| T::c(rng.random::<f64>())).collect()),
        Strategy::Uncertainty => pool
            .par_iter()
            .map(|x| Ok(entropy(&model.predict_proba(&x.features)?)))
            .collect(),
        Strategy::Goral { resolver, .. } => {
            let engine = engine.ok_or_else(|| Error::InvalidArgument("goral scoring needs an influence engine".into()))?;
            if resolver.needs_label() && hidden_labels.is_none() {
                return Err(Error::MissingResolverInput("ground-truth pool labels"));
            }
            pool.par_iter()
                .enumerate()
                .map(|(i, x)| engine.approx_utility(x, resolver, hidden_labels.map(|l| l[i])))
                .collect()
        }
    }
}

/// Indices of the `b` largest utilities (smaller index first on ties),
/// returned in ascending index order.
pub fn select_batch<T: Scalar>(utilities: &[T], b: usize) -> Result<Vec<usize>> {
    if b > utilities.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {b} exceeds {} candidates",
            utilities.len()
        )));
    }
    let mut order: Vec<usize> = (0..utilities.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, c) = (utilities[i], utilities[j]);
        match c.partial_cmp(&a) {
            Some(Ordering::Equal) | None => {
                // NaN ranks below everything.
                match (a.is_nan(), c.is_nan()) {
                    (true, false) => Ordering::Greater,
                    (false, true) => Ordering::Less,
                    _ => i.cmp(&j),
                }
            }
            Some(o) => o,
        }
    });
    let mut picked: Vec<usize> = order.into_iter().take(b).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Where goal context sets come from. Fixed when the loop starts.
#[derive(Debug, Clone)]
pub enum GoalContext<T> {
    /// The whole initial pool.
    Pool,
    /// A seeded random subset of the initial pool.
    PoolSubset { size: usize, seed: u64 },
    Explicit(Vec<Sample<T>>),
}

#[derive(Debug, Clone)]
pub struct LoopConfig<T> {
    pub grad_tol: T,
    pub max_iter: usize,
    pub solver: SolverConfig<T>,
    /// Seeds the random-strategy stream.
    pub seed: u64,
    pub snapshot_utilities: bool,
    /// Unlabelled set for `ent` and `fir` goals.
    pub unlabeled_context: GoalContext<T>,
    /// Goal recorded each iteration; defaults to the strategy's own goal.
    pub track_goal: Option<GoalKind>,
}

impl<T: Scalar> Default for LoopConfig<T> {
    fn default() -> Self {
        Self {
            grad_tol: T::c(1e-8),
            max_iter: 100,
            solver: SolverConfig::default(),
            seed: 0,
            snapshot_utilities: false,
            unlabeled_context: GoalContext::Pool,
            track_goal: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlRecord<T> {
    pub iteration: usize,
    /// Pool ids selected at this iteration (labelled before the next one).
    pub queried_ids: Vec<usize>,
    /// Queried ids that are also dev-set members.
    pub queried_dev_ids: Vec<usize>,
    pub n_labeled: usize,
    pub lambda: T,
    pub test_accuracy: T,
    pub goal_value: Option<T>,
    /// `(pool id, utility)` for every candidate scored this iteration.
    pub utilities: Option<Vec<(usize, T)>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlHistory<T> {
    pub strategy: String,
    pub batch_size: usize,
    pub records: Vec<AlRecord<T>>,
    pub final_model: ModelParams<T>,
    /// `(λ(d+1)K, λK)` of a `fir` goal, strategy or tracked.
    pub fir_trace_offsets: Option<(T, T)>,
}

impl<T: Scalar> AlHistory<T> {
    /// Queries made before test accuracy first reaches `threshold`.
    pub fn queries_to_accuracy(&self, threshold: T) -> Option<usize> {
        let init = self.records.first()?.n_labeled;
        self.records
            .iter()
            .find(|r| r.test_accuracy >= threshold)
            .map(|r| r.n_labeled - init)
    }

    pub fn queried_ids(&self) -> Vec<usize> {
        self.records.iter().flat_map(|r| r.queried_ids.iter().copied()).collect()
    }
}

pub(crate) fn make_goal<T: Scalar>(
    kind: GoalKind,
    instance: &AlInstance<T>,
    unlabeled: &[Sample<T>],
    lambda: T,
) -> Result<Goal<T>> {
    match kind {
        GoalKind::Dev => {
            let dev = instance
                .dev
                .clone()
                .ok_or_else(|| Error::Config("goal `dev` needs a dev set on the instance".into()))?;
            Goal::dev(dev)
        }
        GoalKind::Ent => Goal::ent(unlabeled.to_vec()),
        GoalKind::Fir => Goal::fir(unlabeled.to_vec(), lambda),
    }
}

pub(crate) fn unlabeled_set<T: Scalar>(instance: &AlInstance<T>, ctx: &GoalContext<T>) -> Vec<Sample<T>> {
    match ctx {
        GoalContext::Pool => instance.pool.clone(),
        GoalContext::PoolSubset { size, seed } => {
            let size = (*size).min(instance.pool.len());
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut idx = rand::seq::index::sample(&mut rng, instance.pool.len(), size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| instance.pool[i].clone()).collect()
        }
        GoalContext::Explicit(s) => s.clone(),
    }
}

/// Runs `budget` query rounds of size `b`, retraining after each.
#[allow(non_snake_case)]
pub fn run_al_loop<T: Scalar>(
    instance: &AlInstance<T>,
    strategy: &Strategy<T>,
    b: usize,
    budget: usize,
    C: T,
    cfg: &LoopConfig<T>,
) -> Result<AlHistory<T>> {
    if b == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if budget * b > instance.pool.len() {
        return Err(Error::InsufficientData(format!(
            "budget {budget} x batch {b} exceeds pool of {}",
            instance.pool.len()
        )));
    }
    let k = instance.num_classes;
    let dev_ids: BTreeSet<usize> = instance.dev.iter().flatten().map(LabeledSample::id).collect();

    let unlabeled = unlabeled_set(instance, &cfg.unlabeled_context);
    let lambda0 = lambda_from_C(C, instance.init.len())?;
    let strategy_goal = strategy.goal().map(|g| make_goal(g, instance, &unlabeled, lambda0)).transpose()?;
    let tracked_goal = match (cfg.track_goal, strategy.goal()) {
        (Some(t), Some(s)) if t == s => None,
        (Some(t), _) => Some(make_goal(t, instance, &unlabeled, lambda0)?),
        (None, _) => None,
    };
    let recorded_goal: Option<&Goal<T>> = tracked_goal.as_ref().or(strategy_goal.as_ref());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_7a4d_0000);
    let mut train_set = instance.init.clone();
    let mut remaining: Vec<usize> = (0..instance.pool.len()).collect();
    let mut records = Vec::with_capacity(budget + 1);
    let mut warm: Option<ModelParams<T>> = None;

    for iteration in 0..=budget {
        let lambda = lambda_from_C(C, train_set.len())?;
        let mut tc = TrainConfig::new(lambda).with_grad_tol(cfg.grad_tol);
        tc.max_iter = cfg.max_iter;
        tc.warm_start = warm.take();
        let model = train_with_report(&train_set, k, &tc)?.params;
        let test_accuracy = accuracy(&model, &instance.test)?;
        let goal_value = recorded_goal.map(|g| g.value(&model)).transpose()?;

        if iteration == budget {
            records.push(AlRecord {
                iteration,
                queried_ids: Vec::new(),
                queried_dev_ids: Vec::new(),
                n_labeled: train_set.len(),
                lambda,
                test_accuracy,
                goal_value,
                utilities: None,
            });
            warm = Some(model);
            break;
        }
        if remaining.is_empty() {
            return Err(Error::InsufficientData("candidate pool exhausted".into()));
        }

        let engine = match &strategy_goal {
            Some(goal) => Some(build_engine(&model, &train_set, lambda, goal as &dyn GoalFunction<T>, cfg.solver)?),
            None => None,
        };
        let candidates: Vec<Sample<T>> = remaining.iter().map(|&i| instance.pool[i].clone()).collect();
        let labels: Vec<usize> = remaining.iter().map(|&i| instance.hidden_pool_labels[i]).collect();
        let utilities = score_pool(strategy, &model, engine.as_ref(), &candidates, Some(&labels), &mut rng)?;
        let picked = select_batch(&utilities, b.min(remaining.len()))?;

        let queried_ids: Vec<usize> = picked.iter().map(|&j| candidates[j].id).collect();
        let queried_dev_ids = queried_ids.iter().copied().filter(|id| dev_ids.contains(id)).collect();
        let snapshot = cfg
            .snapshot_utilities
            .then(|| candidates.iter().map(|s| s.id).zip(utilities.iter().copied()).collect());
        records.push(AlRecord {
            iteration,
            queried_ids,
            queried_dev_ids,
            n_labeled: train_set.len(),
            lambda,
            test_accuracy,
            goal_value,
            utilities: snapshot,
        });

        for &j in picked.iter().rev() {
            let pool_index = remaining.remove(j);
            train_set.push(instance.reveal(pool_index));
        }
        warm = Some(model);
    }

    Ok(AlHistory {
        strategy: strategy.to_string(),
        batch_size: b,
        records,
        final_model: warm.expect("at least one model trained"),
        fir_trace_offsets: recorded_goal.and_then(|g| g.trace_offsets(instance.dim, k)),
    })
}
