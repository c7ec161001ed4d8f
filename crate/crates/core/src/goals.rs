//! Goal functions `τ(θ)`: negative dev-set loss, negative prediction
//! entropy, and negative trace of the empirical conditional Fisher
//! information. Higher is better for all three.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::{LabeledSample, Sample};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::{add_outer, check_label, ModelParams};
use crate::scalar::Scalar;

/// Anything the influence engine can differentiate through.
pub trait GoalFunction<T: Scalar>: Send + Sync {
    fn value(&self, model: &ModelParams<T>) -> Result<T>;
    fn gradient(&self, model: &ModelParams<T>) -> Result<Vec<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalKind {
    Dev,
    Ent,
    Fir,
}

impl fmt::Display for GoalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoalKind::Dev => "dev",
            GoalKind::Ent => "ent",
            GoalKind::Fir => "fir",
        })
    }
}

impl FromStr for GoalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dev" => Ok(GoalKind::Dev),
            "ent" => Ok(GoalKind::Ent),
            "fir" => Ok(GoalKind::Fir),
            other => Err(Error::InvalidArgument(format!("unknown goal {other:?}"))),
        }
    }
}

/// A goal bound to its context set.
#[derive(Debug, Clone)]
pub enum Goal<T> {
    Dev { dev: Vec<LabeledSample<T>> },
    Ent { unlabeled: Vec<Sample<T>> },
    Fir { unlabeled: Vec<Sample<T>>, lambda: T },
}

impl<T: Scalar> Goal<T> {
    pub fn dev(dev: Vec<LabeledSample<T>>) -> Result<Self> {
        if dev.is_empty() {
            return Err(Error::Empty("dev set"));
        }
        Ok(Goal::Dev { dev })
    }

    pub fn ent(unlabeled: Vec<Sample<T>>) -> Result<Self> {
        if unlabeled.is_empty() {
            return Err(Error::Empty("unlabelled goal set"));
        }
        Ok(Goal::Ent { unlabeled })
    }

    pub fn fir(unlabeled: Vec<Sample<T>>, lambda: T) -> Result<Self> {
        if unlabeled.is_empty() {
            return Err(Error::Empty("unlabelled goal set"));
        }
        Ok(Goal::Fir { unlabeled, lambda })
    }

    pub fn kind(&self) -> GoalKind {
        match self {
            Goal::Dev { .. } => GoalKind::Dev,
            Goal::Ent { .. } => GoalKind::Ent,
            Goal::Fir { .. } => GoalKind::Fir,
        }
    }

    /// For `fir`: the per-sample trace constant in use, `λ(d+1)K`, and the
    /// alternative `λK` that counts only a K×K identity. Shifts the goal
    /// value, never its gradient.
    pub fn trace_offsets(&self, dim: usize, num_classes: usize) -> Option<(T, T)> {
        match self {
            Goal::Fir { lambda, .. } => {
                let k = T::from_usize_lossy(num_classes);
                Some((*lambda * T::from_usize_lossy(dim + 1) * k, *lambda * k))
            }
            _ => None,
        }
    }
}

impl<T: Scalar> GoalFunction<T> for Goal<T> {
    fn value(&self, model: &ModelParams<T>) -> Result<T> {
        match self {
            Goal::Dev { dev } => tau_dev(model, dev),
            Goal::Ent { unlabeled } => tau_ent(model, unlabeled),
            Goal::Fir { unlabeled, lambda } => tau_fir(model, unlabeled, *lambda),
        }
    }

    fn gradient(&self, model: &ModelParams<T>) -> Result<Vec<T>> {
        match self {
            Goal::Dev { dev } => grad_tau_dev(model, dev),
            Goal::Ent { unlabeled } => grad_tau_ent(model, unlabeled),
            Goal::Fir { unlabeled, lambda } => grad_tau_fir(model, unlabeled, *lambda),
        }
    }
}

fn safe_ln<T: Scalar>(p: T) -> T {
    p.max(T::prob_floor()).ln()
}

/// Natural-log entropy with `0 · log 0 = 0`.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    -p.iter()
        .filter(|&&v| v > T::zero())
        .map(|&v| v * safe_ln(v))
        .sum::<T>()
}

fn augmented_norm2<T: Scalar>(x: &[T]) -> T {
    dot(x, x) + T::one()
}

/// `Σ log p_θ(x)[y]` over the dev set.
pub fn tau_dev<T: Scalar>(model: &ModelParams<T>, dev: &[LabeledSample<T>]) -> Result<T> {
    if dev.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let mut total = T::zero();
    for z in dev {
        check_label(model, z)?;
        let p = model.predict_proba(z.features())?;
        total += safe_ln(p[z.label]);
    }
    Ok(total)
}

/// `Σ vec(x̃ (e_y − p)ᵀ)`; no regularizer term.
pub fn grad_tau_dev<T: Scalar>(model: &ModelParams<T>, dev: &[LabeledSample<T>]) -> Result<Vec<T>> {
    if dev.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let mut g = vec![T::zero(); model.len()];
    for z in dev {
        check_label(model, z)?;
        let mut r = model.predict_proba(z.features())?;
        for v in r.iter_mut() {
            *v = -*v;
        }
        r[z.label] += T::one();
        add_outer(&mut g, T::one(), z.features(), &r);
    }
    Ok(g)
}

/// `−Σ H(p_θ(x))` over `unlabeled`.
pub fn tau_ent<T: Scalar>(model: &ModelParams<T>, unlabeled: &[Sample<T>]) -> Result<T> {
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabelled goal set"));
    }
    let mut total = T::zero();
    for s in unlabeled {
        total -= entropy(&model.predict_proba(&s.features)?);
    }
    Ok(total)
}

/// `Σ vec(x̃ (p∘log p + H(p) p)ᵀ)`
pub fn grad_tau_ent<T: Scalar>(model: &ModelParams<T>, unlabeled: &[Sample<T>]) -> Result<Vec<T>> {
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabelled goal set"));
    }
    let mut g = vec![T::zero(); model.len()];
    for s in unlabeled {
        let p = model.predict_proba(&s.features)?;
        let h = entropy(&p);
        let c: Vec<T> = p
            .iter()
            .map(|&pk| if pk > T::zero() { pk * safe_ln(pk) } else { T::zero() } + h * pk)
            .collect();
        add_outer(&mut g, T::one(), &s.features, &c);
    }
    Ok(g)
}

/// `tr(λI + Λ ⊗ x̃x̃ᵀ) = λ(d+1)K + (1 − pᵀp) x̃ᵀx̃`
pub fn sample_hessian_trace<T: Scalar>(model: &ModelParams<T>, x: &[T], lambda: T) -> Result<T> {
    let p = model.predict_proba(x)?;
    let offset = lambda * T::from_usize_lossy(model.len());
    Ok(offset + (T::one() - dot(&p, &p)) * augmented_norm2(x))
}

/// `−(1/|U|) Σ tr(H(θ; x))`
pub fn tau_fir<T: Scalar>(model: &ModelParams<T>, unlabeled: &[Sample<T>], lambda: T) -> Result<T> {
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabelled goal set"));
    }
    let mut total = T::zero();
    for s in unlabeled {
        total += sample_hessian_trace(model, &s.features, lambda)?;
    }
    Ok(-total / T::from_usize_lossy(unlabeled.len()))
}

/// `−(1/|U|) Σ 2 x̃ᵀx̃ · vec(x̃ ((ν1 − p)∘p)ᵀ)`, `ν = pᵀp`. Independent of λ.
pub fn grad_tau_fir<T: Scalar>(model: &ModelParams<T>, unlabeled: &[Sample<T>], _lambda: T) -> Result<Vec<T>> {
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabelled goal set"));
    }
    let mut g = vec![T::zero(); model.len()];
    let scale = -T::c(2.0) / T::from_usize_lossy(unlabeled.len());
    for s in unlabeled {
        let p = model.predict_proba(&s.features)?;
        let nu = dot(&p, &p);
        let c: Vec<T> = p.iter().map(|&pk| (nu - pk) * pk).collect();
        add_outer(&mut g, scale * augmented_norm2(&s.features), &s.features, &c);
    }
    Ok(g)
}

/// Score `∇_θ log p_θ(x)[y] = vec(x̃ (e_y − p)ᵀ)`.
pub fn score<T: Scalar>(model: &ModelParams<T>, x: &[T], y: usize) -> Result<Vec<T>> {
    let mut r = model.predict_proba(x)?;
    if y >= r.len() {
        return Err(Error::InvalidArgument(format!("label {y} out of range")));
    }
    for v in r.iter_mut() {
        *v = -*v;
    }
    r[y] += T::one();
    let mut s = vec![T::zero(); model.len()];
    add_outer(&mut s, T::one(), x, &r);
    Ok(s)
}

/// Largest `(d+1)K` for which dense Fisher matrices are materialized.
pub const FISHER_DIM_LIMIT: usize = 4096;

/// `I(θ|x) = Σ_y p_y s_y s_yᵀ`, dense and row-major.
pub fn fisher_conditional<T: Scalar>(model: &ModelParams<T>, x: &[T]) -> Result<Vec<T>> {
    let m = model.len();
    if m > FISHER_DIM_LIMIT {
        return Err(Error::SizeGuard {
            what: "(d+1)K",
            size: m,
            limit: FISHER_DIM_LIMIT,
        });
    }
    let p = model.predict_proba(x)?;
    let mut out = vec![T::zero(); m * m];
    for (y, &py) in p.iter().enumerate() {
        let s = score(model, x, y)?;
        for a in 0..m {
            let sa = py * s[a];
            if sa == T::zero() {
                continue;
            }
            let row = &mut out[a * m..(a + 1) * m];
            for (r, &sb) in row.iter_mut().zip(&s) {
                *r += sa * sb;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_labeled, random_model, random_sample};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn values_at_zero_model() {
        let m = ModelParams::<f64>::zeros(2, 3);
        let dev = vec![LabeledSample::new(0, vec![1.0, 2.0], 0), LabeledSample::new(1, vec![0.0, -1.0], 2)];
        assert!((tau_dev(&m, &dev).unwrap() + 2.0 * 3f64.ln()).abs() < 1e-14);
        let u: Vec<_> = dev.iter().map(|z| z.sample.clone()).collect();
        assert!((tau_ent(&m, &u).unwrap() + 2.0 * 3f64.ln()).abs() < 1e-14);
        let g = grad_tau_ent(&m, &u).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn dev_value_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 3, 3, 1.0);
        let dev: Vec<_> = (0..5).map(|i| random_labeled(&mut rng, i, 3, 3)).collect();
        let base = tau_dev(&m, &dev).unwrap();
        let mut dup = dev.clone();
        dup.push(dev[2].clone());
        let p = m.predict_proba(dev[2].features()).unwrap();
        assert!((tau_dev(&m, &dup).unwrap() - base - p[dev[2].label].ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let m = random_model(&mut rng, 2, 4, 5.0);
            let u: Vec<_> = (0..10).map(|i| random_sample(&mut rng, i, 2)).collect();
            let v = tau_ent(&m, &u).unwrap();
            assert!(v <= 0.0 && v >= -10.0 * 4f64.ln() - 1e-12);
        }
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn fir_trace_at_zero_binary() {
        let m = ModelParams::<f64>::zeros(3, 2);
        let x = [0.5, -1.0, 2.0];
        let xtx = 0.25 + 1.0 + 4.0 + 1.0;
        let lambda = 0.3;
        let tr = sample_hessian_trace(&m, &x, lambda).unwrap();
        assert!((tr - (lambda * 8.0 + 0.5 * xtx)).abs() < 1e-14);
    }

    #[test]
    fn score_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 3, 4, 1.0);
        let x = random_sample(&mut rng, 0, 3).features;
        let p = m.predict_proba(&x).unwrap();
        let mut mean = vec![0.0; m.len()];
        for (y, &py) in p.iter().enumerate() {
            let s = score(&m, &x, y).unwrap();
            for (a, b) in mean.iter_mut().zip(&s) {
                *a += py * b;
            }
        }
        assert!(mean.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn fisher_zero_input_only_intercepts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut rng, 2, 3, 1.0);
        let f = fisher_conditional(&m, &[0.0, 0.0]).unwrap();
        let n = m.len();
        for a in 0..n {
            for b in 0..n {
                let both_intercept = a % 3 == 2 && b % 3 == 2;
                if !both_intercept {
                    assert_eq!(f[a * n + b], 0.0);
                }
            }
        }
        assert!(f[2 * n + 2] > 0.0);
    }

    #[test]
    fn fisher_size_guard() {
        let m = ModelParams::<f64>::zeros(1024, 4);
        assert!(matches!(fisher_conditional(&m, &vec![0.0; 1024]), Err(Error::SizeGuard { .. })));
    }

    #[test]
    fn empty_contexts_rejected() {
        assert!(Goal::<f64>::dev(vec![]).is_err());
        assert!(Goal::<f64>::ent(vec![]).is_err());
        assert!(Goal::<f64>::fir(vec![], 1.0).is_err());
        let m = ModelParams::<f64>::zeros(1, 2);
        assert!(tau_dev(&m, &[]).is_err());
        assert!(tau_ent(&m, &[]).is_err());
        let bad = vec![Sample::new(0, vec![1.0, 2.0])];
        assert!(matches!(tau_ent(&m, &bad), Err(Error::DimensionMismatch { .. })));
    }
}
