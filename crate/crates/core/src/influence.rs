//! Influence-function approximation of goal-oriented utilities, and the
//! exact retraining oracles it is checked against.
//!
//! For a model `θ̂` minimizing `(1/n) Σ R(z_i, θ)` the engine caches
//! `v = −(1/n) H⁻¹ ∇τ(θ̂)`. The approximate utility of a hypothetical sample
//! `(x, y)` is then `vᵀ ∇R((x, y), θ̂)`, one gradient per label.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::datasets::{LabeledSample, Sample};
use crate::error::{Error, Result};
use crate::goals::GoalFunction;
use crate::linalg::{conjugate_gradient, dot, norm2, norm_inf};
use crate::model::{minimize, ModelParams, Objective, TrainConfig};
use crate::operators::{resolve, resolve_batch, LabelResolver};
use crate::scalar::Scalar;

/// Mean-gradient ∞-norm above which a model is not treated as a minimizer.
pub const STATIONARITY_LIMIT: f64 = 1e-6;

/// Upper bound on joint labelings enumerated by the exact batch oracle.
pub const JOINT_LABELING_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverConfig<T> {
    /// Relative residual target for `H v = −(1/n) ∇τ`.
    pub residual_tol: T,
    /// Defaults to `10 (d+1) K` when unset.
    pub max_cg_iter: Option<usize>,
    /// Added to the diagonal on top of the regularizer.
    pub damping: T,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            residual_tol: T::c(1e-10).max(T::c(100.0) * T::epsilon()),
            max_cg_iter: None,
            damping: T::zero(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InfluenceEngine<T> {
    model: ModelParams<T>,
    train: Vec<LabeledSample<T>>,
    lambda: T,
    goal_value: T,
    goal_grad: Vec<T>,
    v: Vec<T>,
    cg_iterations: usize,
    relative_residual: T,
    solver: SolverConfig<T>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineDiagnostics {
    pub n: usize,
    pub lambda: f64,
    pub goal_value: f64,
    pub goal_grad_norm: f64,
    pub cg_iterations: usize,
    pub relative_residual: f64,
    pub v_norm: f64,
    pub expected_prediction_utility: f64,
    pub v: Vec<f64>,
}

/// Freezes `model` and solves for the cached vector `v`.
pub fn build_engine<T: Scalar>(
    model: &ModelParams<T>,
    train: &[LabeledSample<T>],
    lambda: T,
    goal: &dyn GoalFunction<T>,
    solver: SolverConfig<T>,
) -> Result<InfluenceEngine<T>> {
    if !(solver.residual_tol > T::zero()) {
        return Err(Error::InvalidArgument("residual_tol must be positive".into()));
    }
    let obj = Objective::mean(train, model.dim(), model.num_classes(), lambda)?;
    let grad_norm = norm_inf(&obj.gradient(model)?);
    if grad_norm.to_f64_lossy() >= STATIONARITY_LIMIT {
        return Err(Error::NotStationary {
            grad_norm: grad_norm.to_f64_lossy(),
            limit: STATIONARITY_LIMIT,
        });
    }

    let n = T::from_usize_lossy(train.len());
    let goal_value = goal.value(model)?;
    let goal_grad = goal.gradient(model)?;
    let rhs: Vec<T> = goal_grad.iter().map(|&g| -g / n).collect();
    let hess = obj.hessian_at(model)?;
    let damping = solver.damping;
    let apply = |x: &[T]| {
        let mut hx = hess.apply(x);
        if damping != T::zero() {
            for (h, &xi) in hx.iter_mut().zip(x) {
                *h += damping * xi;
            }
        }
        hx
    };
    let max_iter = solver.max_cg_iter.unwrap_or(10 * model.len());
    let out = conjugate_gradient(apply, &rhs, None, solver.residual_tol, max_iter);
    if !out.converged {
        return Err(Error::CgNonConvergence {
            iterations: out.iterations,
            residual: out.relative_residual.to_f64_lossy(),
        });
    }
    Ok(InfluenceEngine {
        model: model.clone(),
        train: train.to_vec(),
        lambda,
        goal_value,
        goal_grad,
        v: out.x,
        cg_iterations: out.iterations,
        relative_residual: out.relative_residual,
        solver,
    })
}

impl<T: Scalar> InfluenceEngine<T> {
    pub fn model(&self) -> &ModelParams<T> {
        &self.model
    }

    pub fn train(&self) -> &[LabeledSample<T>] {
        &self.train
    }

    pub fn n(&self) -> usize {
        self.train.len()
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn v(&self) -> &[T] {
        &self.v
    }

    pub fn goal_value(&self) -> T {
        self.goal_value
    }

    pub fn goal_gradient(&self) -> &[T] {
        &self.goal_grad
    }

    pub fn cg_iterations(&self) -> usize {
        self.cg_iterations
    }

    pub fn relative_residual(&self) -> T {
        self.relative_residual
    }

    pub fn solver(&self) -> &SolverConfig<T> {
        &self.solver
    }

    /// `vᵀ ∇R((x, y), θ̂)` for every label `y`.
    ///
    /// With `a = x̃ᵀV` this is `λ vᵀθ̂ − a_y + aᵀp`, which equals the
    /// gradient dot product label by label.
    pub fn label_values(&self, x: &[T]) -> Result<Vec<T>> {
        let p = self.model.predict_proba(x)?;
        Ok(self.label_values_with(x, &p))
    }

    fn label_values_with(&self, x: &[T], p: &[T]) -> Vec<T> {
        let a = self.model.project(x, &self.v);
        let shared = self.expected_prediction_utility() + dot(&a, p);
        a.iter().map(|&ay| shared - ay).collect()
    }

    /// `I(z; θ̂) = −∇τᵀ H⁻¹ ∇R(z, θ̂) = n · vᵀ∇R`.
    pub fn influence(&self, z: &LabeledSample<T>) -> Result<T> {
        let values = self.label_values(z.features())?;
        let v = values
            .get(z.label)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("label {} out of range", z.label)))?;
        Ok(T::from_usize_lossy(self.n()) * v)
    }

    /// `π̃(x) = (1/n) ℓ_y[I((x, y); θ̂)]`
    pub fn approx_utility(
        &self,
        x: &Sample<T>,
        resolver: &LabelResolver<T>,
        hidden_label: Option<usize>,
    ) -> Result<T> {
        let p = self.model.predict_proba(&x.features)?;
        let values = self.label_values_with(&x.features, &p);
        let dist = resolver.distribution(&p, x.id)?;
        resolve(&values, resolver, dist.as_deref(), hidden_label)
    }

    /// Mean of the individual influences.
    pub fn batch_influence(&self, batch: &[LabeledSample<T>]) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut total = T::zero();
        for z in batch {
            total += self.influence(z)?;
        }
        Ok(total / T::from_usize_lossy(batch.len()))
    }

    /// `π̃(X) = (b/n) ℓ_Y[I(Z; θ̂)]`, evaluated through the decomposable
    /// extension of `ℓ_y`; equal to the sum of the individual utilities.
    pub fn approx_batch_utility(
        &self,
        batch: &[Sample<T>],
        resolver: &LabelResolver<T>,
        hidden_labels: Option<&[usize]>,
    ) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut rows = Vec::with_capacity(batch.len());
        let mut dists = Vec::with_capacity(batch.len());
        for x in batch {
            let p = self.model.predict_proba(&x.features)?;
            rows.push(self.label_values_with(&x.features, &p));
            if let Some(d) = resolver.distribution(&p, x.id)? {
                dists.push(d);
            }
        }
        let probs = (!dists.is_empty()).then_some(dists.as_slice());
        resolve_batch(&rows, resolver, probs, hidden_labels)
    }

    /// `λ vᵀθ̂`: the approximate utility under expectation over the model's
    /// own prediction, for every sample.
    pub fn expected_prediction_utility(&self) -> T {
        self.lambda * dot(&self.v, self.model.as_slice())
    }

    pub fn diagnostics(&self) -> EngineDiagnostics {
        EngineDiagnostics {
            n: self.n(),
            lambda: self.lambda.to_f64_lossy(),
            goal_value: self.goal_value.to_f64_lossy(),
            goal_grad_norm: norm2(&self.goal_grad).to_f64_lossy(),
            cg_iterations: self.cg_iterations,
            relative_residual: self.relative_residual.to_f64_lossy(),
            v_norm: norm2(&self.v).to_f64_lossy(),
            expected_prediction_utility: self.expected_prediction_utility().to_f64_lossy(),
            v: self.v.iter().map(|x| x.to_f64_lossy()).collect(),
        }
    }

    pub fn write_diagnostics(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, &self.diagnostics())?;
        Ok(())
    }
}

/// Retrains on the base set plus an `ε`-weighted batch:
/// `argmin (1/n) Σ R(z_i) + (ε/b) Σ_{z ∈ Z} R(z)`.
#[derive(Debug, Clone)]
pub struct EpsRetrainer<'a, T> {
    base: &'a [LabeledSample<T>],
    num_classes: usize,
    cfg: TrainConfig<T>,
}

impl<'a, T: Scalar> EpsRetrainer<'a, T> {
    /// `cfg.lambda` is held fixed; `cfg.warm_start` seeds every retraining.
    pub fn new(base: &'a [LabeledSample<T>], num_classes: usize, cfg: TrainConfig<T>) -> Result<Self> {
        if base.is_empty() {
            return Err(Error::Empty("training set"));
        }
        Ok(Self { base, num_classes, cfg })
    }

    pub fn config(&self) -> &TrainConfig<T> {
        &self.cfg
    }

    pub fn retrain(&self, extra: &[(&[T], usize)], eps: T) -> Result<ModelParams<T>> {
        let dim = self.base[0].sample.dim();
        let mut obj = Objective::mean(self.base, dim, self.num_classes, self.cfg.lambda)?;
        if !extra.is_empty() {
            let w = eps / T::from_usize_lossy(extra.len());
            for &(x, y) in extra {
                obj.push(x, y, w)?;
            }
        }
        Ok(minimize(&obj, &self.cfg)?.params)
    }
}

/// Exact goal-oriented utilities by retraining: adding samples at unit
/// weight to the `n`-sample base set, i.e. `ε = b/n`.
pub struct RetrainOracle<'a, T> {
    retrainer: EpsRetrainer<'a, T>,
    goal: &'a dyn GoalFunction<T>,
    base_goal: T,
    n: usize,
}

impl<'a, T: Scalar> RetrainOracle<'a, T> {
    /// `model` must be the minimizer over `base` at `cfg.lambda`; it becomes
    /// the warm start for all retrainings.
    pub fn new(
        base: &'a [LabeledSample<T>],
        num_classes: usize,
        model: &ModelParams<T>,
        cfg: &TrainConfig<T>,
        goal: &'a dyn GoalFunction<T>,
    ) -> Result<Self> {
        let cfg = cfg.clone().with_warm_start(model.clone());
        let base_goal = goal.value(model)?;
        Ok(Self {
            retrainer: EpsRetrainer::new(base, num_classes, cfg)?,
            goal,
            base_goal,
            n: base.len(),
        })
    }

    /// `τ(θ̂)`
    pub fn base_goal(&self) -> T {
        self.base_goal
    }

    fn num_classes(&self) -> usize {
        self.retrainer.num_classes
    }

    fn goal_after(&self, extra: &[(&[T], usize)]) -> Result<T> {
        let eps = T::from_usize_lossy(extra.len()) / T::from_usize_lossy(self.n);
        let m = self.retrainer.retrain(extra, eps)?;
        self.goal.value(&m)
    }

    /// `τ(θ̂_{ε,Z})` for an arbitrary `ε`.
    pub fn goal_at_eps(&self, batch: &[LabeledSample<T>], eps: T) -> Result<T> {
        let extra: Vec<(&[T], usize)> = batch.iter().map(|z| (z.features(), z.label)).collect();
        let m = self.retrainer.retrain(&extra, eps)?;
        self.goal.value(&m)
    }

    /// `τ(θ̂_{(x, y)}) − τ(θ̂)` for every label `y`.
    pub fn label_utilities(&self, x: &[T]) -> Result<Vec<T>> {
        (0..self.num_classes())
            .into_par_iter()
            .map(|y| Ok(self.goal_after(&[(x, y)])? - self.base_goal))
            .collect()
    }

    /// `ℓ_y[τ(θ̂_{(x, y)})] − τ(θ̂)`; the oracle resolver retrains once.
    pub fn utility(
        &self,
        x: &Sample<T>,
        resolver: &LabelResolver<T>,
        model_p: &[T],
        hidden_label: Option<usize>,
    ) -> Result<T> {
        if let LabelResolver::Oracle = resolver {
            let y = hidden_label.ok_or(Error::MissingResolverInput("the ground-truth label"))?;
            return Ok(self.goal_after(&[(&x.features, y)])? - self.base_goal);
        }
        let values = self.label_utilities(&x.features)?;
        let dist = resolver.distribution(model_p, x.id)?;
        resolve(&values, resolver, dist.as_deref(), hidden_label)
    }

    /// Every joint labeling of `batch` (mixed radix, first sample fastest)
    /// with its retrained goal change.
    pub fn joint_label_utilities(&self, batch: &[Sample<T>]) -> Result<Vec<(Vec<usize>, T)>> {
        let k = self.num_classes();
        let count = joint_count(k, batch.len())?;
        (0..count)
            .into_par_iter()
            .map(|code| {
                let labels = decode_labeling(code, k, batch.len());
                let extra: Vec<(&[T], usize)> =
                    batch.iter().zip(&labels).map(|(x, &y)| (x.features.as_slice(), y)).collect();
                let u = self.goal_after(&extra)? - self.base_goal;
                Ok((labels, u))
            })
            .collect()
    }

    /// `ℓ_Y[τ(θ̂_Z)] − τ(θ̂)` with `ℓ_Y` taken over joint labelings.
    pub fn batch_utility(
        &self,
        batch: &[Sample<T>],
        resolver: &LabelResolver<T>,
        model_probs: &[Vec<T>],
        hidden_labels: Option<&[usize]>,
    ) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if let LabelResolver::Oracle = resolver {
            let labels = hidden_labels.ok_or(Error::MissingResolverInput("the ground-truth labels"))?;
            let extra: Vec<(&[T], usize)> =
                batch.iter().zip(labels).map(|(x, &y)| (x.features.as_slice(), y)).collect();
            return Ok(self.goal_after(&extra)? - self.base_goal);
        }
        let joint = self.joint_label_utilities(batch)?;
        resolve_joint(&joint, batch, resolver, model_probs)
    }
}

fn joint_count(k: usize, b: usize) -> Result<usize> {
    let mut count = 1usize;
    for _ in 0..b {
        count = count.saturating_mul(k);
        if count > JOINT_LABELING_LIMIT {
            return Err(Error::SizeGuard {
                what: "K^b joint labelings",
                size: count,
                limit: JOINT_LABELING_LIMIT,
            });
        }
    }
    Ok(count)
}

fn decode_labeling(mut code: usize, k: usize, b: usize) -> Vec<usize> {
    (0..b)
        .map(|_| {
            let y = code % k;
            code /= k;
            y
        })
        .collect()
}

/// Applies a non-oracle resolver jointly over enumerated labelings.
/// Expectation weights a labeling by the product of per-sample `P(y)`.
pub fn resolve_joint<T: Scalar>(
    joint: &[(Vec<usize>, T)],
    batch: &[Sample<T>],
    resolver: &LabelResolver<T>,
    model_probs: &[Vec<T>],
) -> Result<T> {
    match resolver {
        LabelResolver::Min => Ok(joint.iter().map(|(_, u)| *u).fold(T::infinity(), T::min)),
        LabelResolver::Max => Ok(joint.iter().map(|(_, u)| *u).fold(T::neg_infinity(), T::max)),
        LabelResolver::Expectation(_) => {
            if model_probs.len() != batch.len() {
                return Err(Error::DimensionMismatch {
                    expected: batch.len(),
                    got: model_probs.len(),
                });
            }
            let dists = batch
                .iter()
                .zip(model_probs)
                .map(|(x, p)| resolver.distribution(p, x.id).map(Option::unwrap))
                .collect::<Result<Vec<_>>>()?;
            Ok(joint
                .iter()
                .map(|(labels, u)| {
                    let w = labels.iter().zip(&dists).fold(T::one(), |acc, (&y, d)| acc * d[y]);
                    w * *u
                })
                .sum())
        }
        LabelResolver::Oracle => Err(Error::InvalidArgument(
            "oracle resolution needs the ground-truth labeling, not an enumeration".into(),
        )),
    }
}

/// Trains `θ̂` on `base_train` and returns the exact utility of `x`.
#[allow(clippy::too_many_arguments)]
pub fn exact_utility<T: Scalar>(
    x: &Sample<T>,
    resolver: &LabelResolver<T>,
    base_train: &[LabeledSample<T>],
    num_classes: usize,
    cfg: &TrainConfig<T>,
    goal: &dyn GoalFunction<T>,
    hidden_label: Option<usize>,
) -> Result<T> {
    let model = crate::model::train(base_train, num_classes, cfg)?;
    let oracle = RetrainOracle::new(base_train, num_classes, &model, cfg, goal)?;
    let p = model.predict_proba(&x.features)?;
    oracle.utility(x, resolver, &p, hidden_label)
}

/// Trains `θ̂` on `base_train` and returns the exact batch utility of `batch`.
#[allow(clippy::too_many_arguments)]
pub fn exact_batch_utility<T: Scalar>(
    batch: &[Sample<T>],
    resolver: &LabelResolver<T>,
    base_train: &[LabeledSample<T>],
    num_classes: usize,
    cfg: &TrainConfig<T>,
    goal: &dyn GoalFunction<T>,
    hidden_labels: Option<&[usize]>,
) -> Result<T> {
    let model = crate::model::train(base_train, num_classes, cfg)?;
    let oracle = RetrainOracle::new(base_train, num_classes, &model, cfg, goal)?;
    let probs = batch
        .iter()
        .map(|x| model.predict_proba(&x.features))
        .collect::<Result<Vec<_>>>()?;
    oracle.batch_utility(batch, resolver, &probs, hidden_labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goals::Goal;
    use crate::model::{per_sample_grad, train};
    use crate::operators::LabelDist;
    use crate::testutil::{random_labeled, random_sample};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, n: usize, d: usize, k: usize) -> (Vec<LabeledSample<f64>>, ModelParams<f64>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<_> = (0..n).map(|i| random_labeled(&mut rng, i, d, k)).collect();
        let lambda = 0.05;
        let m = train(&data, k, &TrainConfig::new(lambda).with_grad_tol(1e-12)).unwrap();
        (data, m, lambda)
    }

    #[test]
    fn label_values_match_explicit_gradients() {
        let (data, m, lambda) = setup(1, 25, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let u: Vec<_> = (0..15).map(|i| random_sample(&mut rng, 100 + i, 3)).collect();
        let goal = Goal::ent(u.clone()).unwrap();
        let eng = build_engine(&m, &data, lambda, &goal, SolverConfig::default()).unwrap();
        for x in &u {
            let values = eng.label_values(&x.features).unwrap();
            for (y, &val) in values.iter().enumerate() {
                let z = LabeledSample { sample: x.clone(), label: y };
                let g = per_sample_grad(&z, &m, lambda).unwrap();
                assert!((dot(eng.v(), &g) - val).abs() < 1e-13);
                assert!((eng.influence(&z).unwrap() - 25.0 * val).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn zero_goal_gradient_gives_zero_v() {
        let lambda = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<_> = (0..5).map(|i| random_sample(&mut rng, i, 2)).collect();
        let goal = Goal::ent(u).unwrap();
        let zero = ModelParams::zeros(2, 2);
        // Θ = 0 is only stationary for a balanced symmetric set; use x and −x.
        let sym = vec![
            LabeledSample::new(0, vec![1.0, 1.0], 0),
            LabeledSample::new(1, vec![-1.0, -1.0], 0),
            LabeledSample::new(2, vec![1.0, 1.0], 1),
            LabeledSample::new(3, vec![-1.0, -1.0], 1),
        ];
        let eng = build_engine(&zero, &sym, lambda, &goal, SolverConfig::default()).unwrap();
        assert!(eng.v().iter().all(|&v| v == 0.0));
        assert_eq!(eng.expected_prediction_utility(), 0.0);
    }

    #[test]
    fn non_stationary_model_rejected() {
        let (data, m, lambda) = setup(3, 10, 2, 2);
        let mut off = m.clone();
        off.as_mut_slice()[0] += 0.5;
        let goal = Goal::dev(data.clone()).unwrap();
        assert!(matches!(
            build_engine(&off, &data, lambda, &goal, SolverConfig::default()),
            Err(Error::NotStationary { .. })
        ));
        let starved = SolverConfig {
            max_cg_iter: Some(1),
            ..SolverConfig::default()
        };
        assert!(matches!(
            build_engine(&m, &data, lambda, &goal, starved),
            Err(Error::CgNonConvergence { .. })
        ));
    }

    #[test]
    fn expected_prediction_utility_is_constant_and_batches_sum() {
        let (data, m, lambda) = setup(4, 30, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pool: Vec<_> = (0..20).map(|i| random_sample(&mut rng, 100 + i, 3)).collect();
        let goal = Goal::fir(pool.clone(), lambda).unwrap();
        let eng = build_engine(&m, &data, lambda, &goal, SolverConfig::default()).unwrap();
        let exp_model = LabelResolver::Expectation(LabelDist::ModelPrediction);
        let c = eng.expected_prediction_utility();
        for x in &pool {
            assert!((eng.approx_utility(x, &exp_model, None).unwrap() - c).abs() < 1e-12);
        }
        for r in [LabelResolver::Min, LabelResolver::Max, LabelResolver::Expectation(LabelDist::Uniform)] {
            let batch = &pool[3..9];
            let serial: f64 = batch.iter().map(|x| eng.approx_utility(x, &r, None).unwrap()).sum();
            assert_eq!(eng.approx_batch_utility(batch, &r, None).unwrap(), serial);
        }
    }

    #[test]
    fn joint_guard() {
        assert!(joint_count(2, 12).is_ok());
        assert!(matches!(joint_count(2, 13), Err(Error::SizeGuard { .. })));
        assert!(matches!(joint_count(26, 3), Err(Error::SizeGuard { .. })));
        assert_eq!(decode_labeling(5, 2, 3), vec![1, 0, 1]);
    }
}
