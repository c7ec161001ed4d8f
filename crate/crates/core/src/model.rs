//! Multinomial logistic regression with an intercept feature and an ℓ2
//! penalty on every parameter, including the intercepts.
//!
//! Parameters form a `(d+1) × K` matrix stored column-major, so
//! `theta[k * (d + 1) + j]` is the weight of input coordinate `j` for class
//! `k`, and `j = d` is the intercept. Under this layout the per-sample
//! Hessian is `λI + Λ ⊗ x xᵀ` with `Λ = diag(p) − p pᵀ` and `x` the
//! intercept-augmented input.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledSample;
use crate::error::{Error, Result};
use crate::linalg::{axpy, conjugate_gradient, dot, norm2, norm_inf};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    dim: usize,
    num_classes: usize,
    theta: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(dim: usize, num_classes: usize) -> Self {
        Self {
            dim,
            num_classes,
            theta: vec![T::zero(); (dim + 1) * num_classes],
        }
    }

    pub fn from_vec(dim: usize, num_classes: usize, theta: Vec<T>) -> Result<Self> {
        let expected = (dim + 1) * num_classes;
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite model parameter".into()));
        }
        Ok(Self { dim, num_classes, theta })
    }

    /// Input dimension `d`, not counting the intercept.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `d + 1`
    pub fn rows(&self) -> usize {
        self.dim + 1
    }

    /// Length of `vec(Θ)`.
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.theta
    }

    pub fn into_vec(self) -> Vec<T> {
        self.theta
    }

    pub fn get(&self, row: usize, class: usize) -> T {
        self.theta[class * self.rows() + row]
    }

    pub fn set(&mut self, row: usize, class: usize, value: T) {
        let rows = self.rows();
        self.theta[class * rows + row] = value;
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `Θᵀ [x; 1]`
    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut out = vec![T::zero(); self.num_classes];
        self.logits_into(x, &mut out);
        Ok(out)
    }

    fn logits_into(&self, x: &[T], out: &mut [T]) {
        let rows = self.rows();
        for (k, o) in out.iter_mut().enumerate() {
            let col = &self.theta[k * rows..(k + 1) * rows];
            *o = dot(&col[..self.dim], x) + col[self.dim];
        }
    }

    /// Softmax with the maximum logit subtracted first.
    pub fn predict_proba(&self, x: &[T]) -> Result<Vec<T>> {
        let mut p = self.logits(x)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// `xᵀ V` for a `(d+1) × K` column-major `v`, with `x` augmented by 1.
    pub(crate) fn project(&self, x: &[T], v: &[T]) -> Vec<T> {
        let rows = self.rows();
        (0..self.num_classes)
            .map(|k| {
                let col = &v[k * rows..(k + 1) * rows];
                dot(&col[..self.dim], x) + col[self.dim]
            })
            .collect()
    }
}

pub fn softmax_in_place<T: Scalar>(z: &mut [T]) {
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// `log p_y` from logits without forming `p`.
fn log_softmax_at<T: Scalar>(z: &[T], y: usize) -> T {
    let max = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = z.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    z[y] - lse
}

/// `Λ = diag(p) − p pᵀ`, row-major `K × K`.
pub fn prob_curvature<T: Scalar>(p: &[T]) -> Vec<T> {
    let k = p.len();
    let mut out = vec![T::zero(); k * k];
    for a in 0..k {
        for b in 0..k {
            out[a * k + b] = if a == b { p[a] } else { T::zero() } - p[a] * p[b];
        }
    }
    out
}

/// Adds `scale · vec(x̃ cᵀ)` to `out`, `x̃ = [x; 1]`.
#[inline]
pub(crate) fn add_outer<T: Scalar>(out: &mut [T], scale: T, x: &[T], c: &[T]) {
    let rows = x.len() + 1;
    for (k, &ck) in c.iter().enumerate() {
        let s = scale * ck;
        if s == T::zero() {
            continue;
        }
        let col = &mut out[k * rows..(k + 1) * rows];
        axpy(s, x, &mut col[..rows - 1]);
        col[rows - 1] += s;
    }
}

pub(crate) fn check_label<T: Scalar>(model: &ModelParams<T>, z: &LabeledSample<T>) -> Result<()> {
    model.check_input(z.features())?;
    if z.label >= model.num_classes {
        return Err(Error::InvalidArgument(format!(
            "label {} out of range for {} classes",
            z.label, model.num_classes
        )));
    }
    Ok(())
}

/// `R(z, θ) = (λ/2) θᵀθ − log p_θ(x)[y]`
pub fn per_sample_loss<T: Scalar>(z: &LabeledSample<T>, model: &ModelParams<T>, lambda: T) -> Result<T> {
    check_label(model, z)?;
    let logits = model.logits(z.features())?;
    let reg = T::c(0.5) * lambda * dot(model.as_slice(), model.as_slice());
    Ok(reg - log_softmax_at(&logits, z.label))
}

/// `∇R = λθ − vec(x̃ (e_y − p)ᵀ)`
pub fn per_sample_grad<T: Scalar>(z: &LabeledSample<T>, model: &ModelParams<T>, lambda: T) -> Result<Vec<T>> {
    check_label(model, z)?;
    let p = model.predict_proba(z.features())?;
    let mut g: Vec<T> = model.as_slice().iter().map(|&t| lambda * t).collect();
    let mut resid = p;
    for v in resid.iter_mut() {
        *v = -*v;
    }
    resid[z.label] += T::one();
    add_outer(&mut g, -T::one(), z.features(), &resid);
    Ok(g)
}

/// One weighted cross-entropy term of an objective.
#[derive(Debug, Clone, Copy)]
pub struct Term<'a, T> {
    pub x: &'a [T],
    pub label: usize,
    pub weight: T,
}

/// `F(θ) = Σ_i w_i R(z_i, θ)`.
///
/// With `w_i = 1/n` this is the mean training objective; extra terms with
/// weight `ε` give the perturbed objectives used by the retraining oracles.
#[derive(Debug, Clone)]
pub struct Objective<'a, T> {
    terms: Vec<Term<'a, T>>,
    lambda: T,
    dim: usize,
    num_classes: usize,
}

impl<'a, T: Scalar> Objective<'a, T> {
    pub fn new(dim: usize, num_classes: usize, lambda: T) -> Self {
        Self {
            terms: Vec::new(),
            lambda,
            dim,
            num_classes,
        }
    }

    /// Mean objective `(1/n) Σ R(z_i, θ)`.
    pub fn mean(samples: &'a [LabeledSample<T>], dim: usize, num_classes: usize, lambda: T) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let w = T::one() / T::from_usize_lossy(samples.len());
        let mut obj = Self::new(dim, num_classes, lambda);
        for z in samples {
            obj.push(z.features(), z.label, w)?;
        }
        Ok(obj)
    }

    pub fn push(&mut self, x: &'a [T], label: usize, weight: T) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if label >= self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                self.num_classes
            )));
        }
        self.terms.push(Term { x, label, weight });
        Ok(())
    }

    pub fn terms(&self) -> &[Term<'a, T>] {
        &self.terms
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn total_weight(&self) -> T {
        self.terms.iter().map(|t| t.weight).sum()
    }

    fn check(&self, model: &ModelParams<T>) -> Result<()> {
        if model.dim() != self.dim || model.num_classes() != self.num_classes {
            return Err(Error::DimensionMismatch {
                expected: (self.dim + 1) * self.num_classes,
                got: model.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, model: &ModelParams<T>) -> Result<T> {
        self.check(model)?;
        let mut logits = vec![T::zero(); self.num_classes];
        let mut ce = T::zero();
        for t in &self.terms {
            model.logits_into(t.x, &mut logits);
            ce -= t.weight * log_softmax_at(&logits, t.label);
        }
        let reg = T::c(0.5) * self.lambda * self.total_weight() * dot(model.as_slice(), model.as_slice());
        Ok(reg + ce)
    }

    pub fn value_and_gradient(&self, model: &ModelParams<T>) -> Result<(T, Vec<T>)> {
        self.check(model)?;
        let reg_w = self.lambda * self.total_weight();
        let mut grad: Vec<T> = model.as_slice().iter().map(|&t| reg_w * t).collect();
        let mut value = T::c(0.5) * reg_w * dot(model.as_slice(), model.as_slice());
        let mut z = vec![T::zero(); self.num_classes];
        for t in &self.terms {
            model.logits_into(t.x, &mut z);
            value -= t.weight * log_softmax_at(&z, t.label);
            softmax_in_place(&mut z);
            // p − e_y
            z[t.label] -= T::one();
            add_outer(&mut grad, t.weight, t.x, &z);
        }
        Ok((value, grad))
    }

    pub fn gradient(&self, model: &ModelParams<T>) -> Result<Vec<T>> {
        Ok(self.value_and_gradient(model)?.1)
    }

    /// Hessian of the objective at `model`, applied matrix-free.
    pub fn hessian_at(&self, model: &ModelParams<T>) -> Result<HessianOperator<'a, T>> {
        self.check(model)?;
        let probs = self
            .terms
            .iter()
            .map(|t| {
                let mut p = vec![T::zero(); self.num_classes];
                model.logits_into(t.x, &mut p);
                softmax_in_place(&mut p);
                p
            })
            .collect();
        Ok(HessianOperator {
            terms: self.terms.clone(),
            probs,
            reg: self.lambda * self.total_weight(),
            dim: self.dim,
            num_classes: self.num_classes,
        })
    }
}

/// `v ↦ (λ Σw) v + Σ_i w_i (Λ_i ⊗ x̃_i x̃_iᵀ) v` with probabilities frozen at
/// one point.
#[derive(Debug, Clone)]
pub struct HessianOperator<'a, T> {
    terms: Vec<Term<'a, T>>,
    probs: Vec<Vec<T>>,
    reg: T,
    dim: usize,
    num_classes: usize,
}

impl<T: Scalar> HessianOperator<'_, T> {
    pub fn len(&self) -> usize {
        (self.dim + 1) * self.num_classes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.len(), "hessian operand length");
        let rows = self.dim + 1;
        let mut out: Vec<T> = v.iter().map(|&x| self.reg * x).collect();
        let mut a = vec![T::zero(); self.num_classes];
        for (t, p) in self.terms.iter().zip(&self.probs) {
            // (Λ ⊗ x̃x̃ᵀ) vec(V) = vec(x̃ (x̃ᵀV) Λ)
            for (k, ak) in a.iter_mut().enumerate() {
                let col = &v[k * rows..(k + 1) * rows];
                *ak = dot(&col[..self.dim], t.x) + col[self.dim];
            }
            let pa = dot(p, &a);
            for (ak, &pk) in a.iter_mut().zip(p) {
                *ak = pk * (*ak - pa);
            }
            add_outer(&mut out, t.weight, t.x, &a);
        }
        out
    }
}

/// Mean-Hessian product `H v` over `train` at `model`.
pub fn hessian_vector_product<T: Scalar>(
    model: &ModelParams<T>,
    train: &[LabeledSample<T>],
    lambda: T,
    v: &[T],
) -> Result<Vec<T>> {
    if v.len() != model.len() {
        return Err(Error::DimensionMismatch {
            expected: model.len(),
            got: v.len(),
        });
    }
    let obj = Objective::mean(train, model.dim(), model.num_classes(), lambda)?;
    Ok(obj.hessian_at(model)?.apply(v))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub lambda: T,
    /// Stop once the objective gradient's ∞-norm falls below this.
    pub grad_tol: T,
    pub max_iter: usize,
    #[serde(default)]
    pub warm_start: Option<ModelParams<T>>,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(lambda: T) -> Self {
        Self {
            lambda,
            grad_tol: T::c(1e-8),
            max_iter: 100,
            warm_start: None,
        }
    }

    pub fn with_grad_tol(mut self, tol: T) -> Self {
        self.grad_tol = tol;
        self
    }

    pub fn with_warm_start(mut self, model: ModelParams<T>) -> Self {
        self.warm_start = Some(model);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > T::zero()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.grad_tol > T::zero()) {
            return Err(Error::InvalidArgument(format!("grad_tol must be positive, got {}", self.grad_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    pub params: ModelParams<T>,
    /// Newton steps taken.
    pub iterations: usize,
    pub grad_inf_norm: T,
    pub objective: T,
}

/// Minimizes an objective by Newton's method with CG inner solves and a
/// backtracking line search.
pub fn minimize<T: Scalar>(obj: &Objective<'_, T>, cfg: &TrainConfig<T>) -> Result<TrainReport<T>> {
    cfg.validate()?;
    let mut model = match &cfg.warm_start {
        Some(m) => {
            obj.check(m)?;
            m.clone()
        }
        None => ModelParams::zeros(obj.dim(), obj.num_classes()),
    };
    let n = model.len();
    let slack = T::c(16.0) * T::epsilon();
    let (mut f, mut g) = obj.value_and_gradient(&model)?;
    for it in 0..=cfg.max_iter {
        let gnorm = norm_inf(&g);
        if gnorm < cfg.grad_tol {
            return Ok(TrainReport {
                params: model,
                iterations: it,
                grad_inf_norm: gnorm,
                objective: f,
            });
        }
        if it == cfg.max_iter {
            return Err(Error::NonConvergence {
                iterations: it,
                grad_norm: gnorm.to_f64_lossy(),
            });
        }
        let hess = obj.hessian_at(&model)?;
        let neg_g: Vec<T> = g.iter().map(|&v| -v).collect();
        let forcing = T::c(0.5).min(norm2(&g).sqrt());
        let step = conjugate_gradient(|v| hess.apply(v), &neg_g, None, forcing, 10 * n).x;
        let slope = dot(&g, &step);

        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = model.clone();
            axpy(t, &step, trial.as_mut_slice());
            let (f_new, g_new) = obj.value_and_gradient(&trial)?;
            if f_new <= f + T::c(1e-4) * t * slope + slack * f.abs() {
                accepted = Some((trial, f_new, g_new));
                break;
            }
            t *= T::c(0.5);
        }
        match accepted {
            Some((m, f_new, g_new)) => {
                model = m;
                f = f_new;
                g = g_new;
            }
            None => {
                return Err(Error::NonConvergence {
                    iterations: it,
                    grad_norm: gnorm.to_f64_lossy(),
                })
            }
        }
    }
    unreachable!("loop returns at it == max_iter")
}

fn infer_dim<T: Scalar>(train: &[LabeledSample<T>]) -> Result<usize> {
    train.first().map(|z| z.sample.dim()).ok_or(Error::Empty("training set"))
}

/// Trains on the mean objective and reports iteration counts.
pub fn train_with_report<T: Scalar>(
    train: &[LabeledSample<T>],
    num_classes: usize,
    cfg: &TrainConfig<T>,
) -> Result<TrainReport<T>> {
    let dim = infer_dim(train)?;
    let obj = Objective::mean(train, dim, num_classes, cfg.lambda)?;
    minimize(&obj, cfg)
}

pub fn train<T: Scalar>(
    train: &[LabeledSample<T>],
    num_classes: usize,
    cfg: &TrainConfig<T>,
) -> Result<ModelParams<T>> {
    Ok(train_with_report(train, num_classes, cfg)?.params)
}

/// `λ = 1 / (n C)`
#[allow(non_snake_case)]
pub fn lambda_from_C<T: Scalar>(C: T, n: usize) -> Result<T> {
    if !(C > T::zero()) || n == 0 {
        return Err(Error::InvalidArgument(format!("need C > 0 and n >= 1, got C={C}, n={n}")));
    }
    Ok(T::one() / (T::from_usize_lossy(n) * C))
}

/// Picks the `C` with the highest mean held-out log-likelihood; ties go to
/// the smaller `C`.
#[allow(non_snake_case)]
pub fn cross_validate_C<T: Scalar>(
    data: &[LabeledSample<T>],
    num_classes: usize,
    grid: &[T],
    folds: usize,
    seed: u64,
) -> Result<T> {
    if grid.is_empty() {
        return Err(Error::Empty("C grid"));
    }
    if folds < 2 || folds > data.len() {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= folds <= {} samples, got {folds}",
            data.len()
        )));
    }
    let mut sorted: Vec<T> = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite C grid"));
    if grid.len() == 1 {
        return Ok(grid[0]);
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; data.len()];
        for (rank, &i) in order.iter().enumerate() {
            f[i] = rank % folds;
        }
        f
    };

    let mut best: Option<(T, T)> = None;
    for &c in &sorted {
        let mut total = T::zero();
        for fold in 0..folds {
            let (held, fit): (Vec<_>, Vec<_>) = data.iter().cloned().enumerate().partition(|(i, _)| fold_of[*i] == fold);
            let fit: Vec<LabeledSample<T>> = fit.into_iter().map(|(_, z)| z).collect();
            let held: Vec<LabeledSample<T>> = held.into_iter().map(|(_, z)| z).collect();
            let cfg = TrainConfig::new(lambda_from_C(c, fit.len())?);
            let model = train(&fit, num_classes, &cfg)?;
            let mut ll = T::zero();
            for z in &held {
                ll += log_softmax_at(&model.logits(z.features())?, z.label);
            }
            total += ll / T::from_usize_lossy(held.len());
        }
        let score = total / T::from_usize_lossy(folds);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((c, score));
        }
    }
    Ok(best.unwrap().0)
}

/// Index of the largest entry; the smallest index wins ties.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy<T: Scalar>(model: &ModelParams<T>, test: &[LabeledSample<T>]) -> Result<T> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut correct = 0usize;
    for z in test {
        if argmax(&model.logits(z.features())?) == z.label {
            correct += 1;
        }
    }
    Ok(T::from_usize_lossy(correct) / T::from_usize_lossy(test.len()))
}

const CHECKPOINT_MAGIC: &str = "goral-mlr 1";

/// Text checkpoint:
///
/// ```text
/// goral-mlr 1
/// d=<d> k=<K> lambda=<λ>
/// <K values for input row 0>
/// ...
/// <K values for the intercept row d>
/// ```
///
/// Values are written in shortest round-trip form.
pub fn checkpoint_to_string<T: Scalar>(model: &ModelParams<T>, lambda: T) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(s, "d={} k={} lambda={}", model.dim(), model.num_classes(), lambda);
    for row in 0..model.rows() {
        let line: Vec<String> = (0..model.num_classes()).map(|k| model.get(row, k).to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn checkpoint_from_str<T: Scalar>(text: &str, path: &Path) -> Result<(ModelParams<T>, T)> {
    let err = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CHECKPOINT_MAGIC) {
        return Err(err(1, "missing checkpoint header"));
    }
    let header = lines.next().ok_or_else(|| err(2, "missing shape line"))?;
    let mut d = None;
    let mut k = None;
    let mut lambda = None;
    for tok in header.split_whitespace() {
        match tok.split_once('=') {
            Some(("d", v)) => d = v.parse::<usize>().ok(),
            Some(("k", v)) => k = v.parse::<usize>().ok(),
            Some(("lambda", v)) => lambda = v.parse::<f64>().ok(),
            _ => return Err(err(2, "unexpected token in shape line")),
        }
    }
    let (d, k, lambda) = match (d, k, lambda) {
        (Some(d), Some(k), Some(l)) => (d, k, T::c(l)),
        _ => return Err(err(2, "shape line needs d=, k= and lambda=")),
    };
    let mut model = ModelParams::zeros(d, k);
    for row in 0..=d {
        let lineno = row + 3;
        let line = lines.next().ok_or_else(|| err(lineno, "missing parameter row"))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != k {
            return Err(err(lineno, "wrong number of columns"));
        }
        for (class, v) in vals.iter().enumerate() {
            let v: f64 = v.parse().map_err(|_| err(lineno, "invalid number"))?;
            if !v.is_finite() {
                return Err(err(lineno, "non-finite parameter"));
            }
            model.set(row, class, T::c(v));
        }
    }
    Ok((model, lambda))
}

pub fn save_checkpoint<T: Scalar>(model: &ModelParams<T>, lambda: T, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model, lambda))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(ModelParams<T>, T)> {
    let path = path.as_ref();
    checkpoint_from_str(&std::fs::read_to_string(path)?, path)
}
