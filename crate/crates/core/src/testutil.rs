use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::{LabeledSample, Sample};
use crate::model::ModelParams;

pub fn random_model(rng: &mut ChaCha8Rng, dim: usize, k: usize, scale: f64) -> ModelParams<f64> {
    let theta = (0..(dim + 1) * k).map(|_| rng.random_range(-scale..scale)).collect();
    ModelParams::from_vec(dim, k, theta).unwrap()
}

pub fn random_sample(rng: &mut ChaCha8Rng, id: usize, dim: usize) -> Sample<f64> {
    Sample::new(id, (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
}

pub fn random_labeled(rng: &mut ChaCha8Rng, id: usize, dim: usize, k: usize) -> LabeledSample<f64> {
    let s = random_sample(rng, id, dim);
    LabeledSample { sample: s, label: rng.random_range(0..k) }
}
