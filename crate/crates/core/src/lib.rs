//! Goal-oriented active learning for multinomial logistic regression.
//!
//! Query utilities are the change in a goal function after adding a
//! candidate to the training set, approximated with influence functions.
//! All numerics are generic over [`Scalar`]; the root aliases fix `f64`.

pub mod datasets;
pub mod error;
pub mod goals;
pub mod harness;
pub mod influence;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod scalar;
pub mod stats;
pub mod strategies;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use goals::{GoalFunction, GoalKind};
pub use scalar::Scalar;

pub type Sample = datasets::Sample<f64>;
pub type LabeledSample = datasets::LabeledSample<f64>;
pub type Dataset = datasets::Dataset<f64>;
pub type AlInstance = datasets::AlInstance<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type TrainConfig = model::TrainConfig<f64>;
pub type Goal = goals::Goal<f64>;
pub type LabelResolver = operators::LabelResolver<f64>;
pub type LabelDist = operators::LabelDist<f64>;
pub type SolverConfig = influence::SolverConfig<f64>;
pub type InfluenceEngine = influence::InfluenceEngine<f64>;
pub type Strategy = strategies::Strategy<f64>;
pub type LoopConfig = strategies::LoopConfig<f64>;
pub type AlHistory = strategies::AlHistory<f64>;

/// Single-precision aliases.
pub mod f32 {
    pub type Sample = crate::datasets::Sample<f32>;
    pub type LabeledSample = crate::datasets::LabeledSample<f32>;
    pub type AlInstance = crate::datasets::AlInstance<f32>;
    pub type ModelParams = crate::model::ModelParams<f32>;
    pub type Goal = crate::goals::Goal<f32>;
    pub type InfluenceEngine = crate::influence::InfluenceEngine<f32>;
    pub type Strategy = crate::strategies::Strategy<f32>;
}
