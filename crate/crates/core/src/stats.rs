//! Rank and linear correlation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pearson correlation coefficient.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("correlation needs at least two points".into()));
    }
    let n = T::from_usize_lossy(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::InvalidArgument("correlation of a constant series".into()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Average ranks (1-based, ties share the mean rank).
pub fn ranks<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![T::zero(); x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = T::c((i + j) as f64 / 2.0 + 1.0);
        for &o in &order[i..=j] {
            out[o] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    pearson(&ranks(x), &ranks(y))
}

pub fn median<T: Scalar>(x: &[T]) -> Option<T> {
    if x.is_empty() {
        return None;
    }
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / T::c(2.0) })
}
