//! Shared fixtures and dense reference implementations for integration tests.
#![allow(dead_code)]

use goral::datasets::{LabeledSample, Sample};
use goral::model::ModelParams;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_model(rng: &mut ChaCha8Rng, dim: usize, k: usize, scale: f64) -> ModelParams<f64> {
    let theta = (0..(dim + 1) * k).map(|_| rng.random_range(-scale..scale)).collect();
    ModelParams::from_vec(dim, k, theta).unwrap()
}

pub fn random_sample(rng: &mut ChaCha8Rng, id: usize, dim: usize) -> Sample<f64> {
    Sample::new(id, (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
}

pub fn random_pool(rng: &mut ChaCha8Rng, first_id: usize, n: usize, dim: usize) -> Vec<Sample<f64>> {
    (0..n).map(|i| random_sample(rng, first_id + i, dim)).collect()
}

/// Labels drawn from a random linear teacher so classes are learnable.
pub fn random_labeled_set(rng: &mut ChaCha8Rng, n: usize, dim: usize, k: usize) -> Vec<LabeledSample<f64>> {
    let teacher = random_model(rng, dim, k, 2.0);
    (0..n)
        .map(|i| {
            let x = random_sample(rng, i, dim).features;
            let p = naive_softmax(&naive_logits(&teacher, &x));
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let y = p.iter().position(|&q| {
                acc += q;
                u < acc
            });
            LabeledSample::new(i, x, y.unwrap_or(k - 1))
        })
        .collect()
}

pub fn augmented(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.push(1.0);
    v
}

/// Θ as a (d+1)×K nalgebra matrix; `vec(Θ)` is its column-major storage.
pub fn theta_matrix(m: &ModelParams<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(m.dim() + 1, m.num_classes(), m.as_slice())
}

pub fn naive_logits(m: &ModelParams<f64>, x: &[f64]) -> Vec<f64> {
    let xt = DVector::from_vec(augmented(x));
    (theta_matrix(m).transpose() * xt).iter().copied().collect()
}

pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn naive_loss(m: &ModelParams<f64>, x: &[f64], y: usize, lambda: f64) -> f64 {
    let p = naive_softmax(&naive_logits(m, x));
    let sq: f64 = m.as_slice().iter().map(|t| t * t).sum();
    0.5 * lambda * sq - p[y].ln()
}

pub fn naive_mean_loss(m: &ModelParams<f64>, data: &[LabeledSample<f64>], lambda: f64) -> f64 {
    data.iter().map(|z| naive_loss(m, z.features(), z.label, lambda)).sum::<f64>() / data.len() as f64
}

/// `Λ = diag(p) − ppᵀ` as a dense matrix.
pub fn curvature(p: &[f64]) -> DMatrix<f64> {
    let pv = DVector::from_column_slice(p);
    DMatrix::from_diagonal(&pv) - &pv * pv.transpose()
}

/// Dense `λI + Λ ⊗ x̃x̃ᵀ` for one sample.
pub fn dense_sample_hessian(m: &ModelParams<f64>, x: &[f64], lambda: f64) -> DMatrix<f64> {
    let xt = DVector::from_vec(augmented(x));
    let p = naive_softmax(&naive_logits(m, x));
    let big = curvature(&p).kronecker(&(&xt * xt.transpose()));
    big + DMatrix::identity(m.len(), m.len()) * lambda
}

/// Mean of the per-sample dense Hessians.
pub fn dense_hessian(m: &ModelParams<f64>, data: &[LabeledSample<f64>], lambda: f64) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(m.len(), m.len());
    for z in data {
        h += dense_sample_hessian(m, z.features(), lambda);
    }
    h / data.len() as f64
}

/// Central finite-difference gradient of `f` at `theta`.
pub fn fd_gradient(f: impl Fn(&ModelParams<f64>) -> f64, m: &ModelParams<f64>, h: f64) -> Vec<f64> {
    (0..m.len())
        .map(|i| {
            let mut plus = m.clone();
            let mut minus = m.clone();
            plus.as_mut_slice()[i] += h;
            minus.as_mut_slice()[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖b‖, floor)`
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / nb.max(floor)
}
