//! Label-resolution operators `ℓ_y` and the label distributions that feed
//! the expectation operator.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::argmax;
use crate::scalar::Scalar;

/// Source of `P(y)` for the expectation operator.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelDist<T> {
    /// The current model's own prediction `p_θ̂(x)`.
    ModelPrediction,
    Uniform,
    /// `∝ p_θ̂(x)^{1/T}`
    Tempered(T),
    /// Per-sample distributions keyed by sample id.
    External(BTreeMap<usize, Vec<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelResolver<T> {
    Expectation(LabelDist<T>),
    Min,
    Max,
    /// Ground-truth label; needs hidden-label access.
    Oracle,
}

impl<T: Scalar> LabelResolver<T> {
    pub fn is_linear(&self) -> bool {
        matches!(self, LabelResolver::Expectation(_) | LabelResolver::Oracle)
    }

    pub fn needs_label(&self) -> bool {
        matches!(self, LabelResolver::Oracle)
    }

    /// The `P(y)` this resolver averages under, given the model prediction
    /// for the sample. `None` for non-expectation resolvers.
    pub fn distribution(&self, model_p: &[T], sample_id: usize) -> Result<Option<Vec<T>>> {
        let LabelResolver::Expectation(dist) = self else {
            return Ok(None);
        };
        let k = model_p.len();
        let p = match dist {
            LabelDist::ModelPrediction => model_p.to_vec(),
            LabelDist::Uniform => vec![T::one() / T::from_usize_lossy(k); k],
            LabelDist::Tempered(t) => tempered_distribution(model_p, *t)?,
            LabelDist::External(table) => {
                let p = table
                    .get(&sample_id)
                    .ok_or(Error::MissingResolverInput("an external distribution for this sample"))?;
                if p.len() != k {
                    return Err(Error::DimensionMismatch { expected: k, got: p.len() });
                }
                p.clone()
            }
        };
        Ok(Some(p))
    }
}

impl<T: Scalar> fmt::Display for LabelResolver<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelResolver::Expectation(LabelDist::ModelPrediction) => f.write_str("expectation:model"),
            LabelResolver::Expectation(LabelDist::Uniform) => f.write_str("expectation:uniform"),
            LabelResolver::Expectation(LabelDist::Tempered(t)) => write!(f, "expectation:tempered:{t}"),
            LabelResolver::Expectation(LabelDist::External(_)) => f.write_str("expectation:external"),
            LabelResolver::Min => f.write_str("min"),
            LabelResolver::Max => f.write_str("max"),
            LabelResolver::Oracle => f.write_str("oracle"),
        }
    }
}

impl<T: Scalar> FromStr for LabelResolver<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["min"] => Ok(LabelResolver::Min),
            ["max"] => Ok(LabelResolver::Max),
            ["oracle"] => Ok(LabelResolver::Oracle),
            ["expectation", "model"] => Ok(LabelResolver::Expectation(LabelDist::ModelPrediction)),
            ["expectation", "uniform"] => Ok(LabelResolver::Expectation(LabelDist::Uniform)),
            ["expectation", "tempered", t] => {
                let t: f64 = t
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("invalid temperature {t:?}")))?;
                if !(t > 0.0) {
                    return Err(Error::InvalidArgument(format!("temperature must be positive, got {t}")));
                }
                Ok(LabelResolver::Expectation(LabelDist::Tempered(T::c(t))))
            }
            _ => Err(Error::InvalidArgument(format!("unknown resolver {s:?}"))),
        }
    }
}

/// `p^{1/T}` renormalized, computed in log space.
pub fn tempered_distribution<T: Scalar>(p: &[T], temperature: T) -> Result<Vec<T>> {
    if !(temperature > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if p.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    let inv = T::one() / temperature;
    if !inv.is_finite() {
        let mut out = vec![T::zero(); p.len()];
        out[argmax(p)] = T::one();
        return Ok(out);
    }
    let logs: Vec<T> = p
        .iter()
        .map(|&v| if v > T::zero() { v.ln() * inv } else { T::neg_infinity() })
        .collect();
    let max = logs.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut out: Vec<T> = logs.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = out.iter().copied().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    Ok(out)
}

/// Resolves a per-label vector of values to one number.
pub fn resolve<T: Scalar>(
    values: &[T],
    resolver: &LabelResolver<T>,
    p: Option<&[T]>,
    true_label: Option<usize>,
) -> Result<T> {
    if values.is_empty() {
        return Err(Error::Empty("per-label values"));
    }
    match resolver {
        LabelResolver::Expectation(_) => {
            let p = p.ok_or(Error::MissingResolverInput("a label distribution"))?;
            if p.len() != values.len() {
                return Err(Error::DimensionMismatch {
                    expected: values.len(),
                    got: p.len(),
                });
            }
            Ok(p.iter().zip(values).map(|(&a, &b)| a * b).sum())
        }
        LabelResolver::Min => Ok(values.iter().copied().fold(T::infinity(), T::min)),
        LabelResolver::Max => Ok(values.iter().copied().fold(T::neg_infinity(), T::max)),
        LabelResolver::Oracle => {
            let y = true_label.ok_or(Error::MissingResolverInput("the ground-truth label"))?;
            values
                .get(y)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("label {y} out of range")))
        }
    }
}

/// Decomposable batch extension: the sum of per-row resolutions.
pub fn resolve_batch<T: Scalar>(
    rows: &[Vec<T>],
    resolver: &LabelResolver<T>,
    probs: Option<&[Vec<T>]>,
    labels: Option<&[usize]>,
) -> Result<T> {
    if let Some(p) = probs {
        if p.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: p.len(),
            });
        }
    }
    if let Some(l) = labels {
        if l.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: l.len(),
            });
        }
    }
    let mut total = T::zero();
    for (i, row) in rows.iter().enumerate() {
        total += resolve(
            row,
            resolver,
            probs.map(|p| p[i].as_slice()),
            labels.map(|l| l[i]),
        )?;
    }
    Ok(total)
}
