//! Small dense-vector kernels and a matrix-free conjugate-gradient solver.

use crate::scalar::Scalar;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

pub fn scale<T: Scalar>(alpha: T, a: &mut [T]) {
    for x in a {
        *x *= alpha;
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// `‖A x − b‖ / ‖b‖` at exit (0 when `b = 0`).
    pub relative_residual: T,
    pub converged: bool,
}

/// Solves `A x = b` for symmetric positive-definite `A` given only `x ↦ A x`.
///
/// Starts from `x0` (or zero) and stops once `‖r‖ ≤ rel_tol · ‖b‖`.
/// The returned residual is recomputed explicitly rather than taken from the
/// recurrence.
pub fn conjugate_gradient<T, F>(
    apply: F,
    b: &[T],
    x0: Option<&[T]>,
    rel_tol: T,
    max_iter: usize,
) -> CgOutcome<T>
where
    T: Scalar,
    F: Fn(&[T]) -> Vec<T>,
{
    let n = b.len();
    let b_norm = norm2(b);
    if b_norm == T::zero() {
        return CgOutcome {
            x: vec![T::zero(); n],
            iterations: 0,
            relative_residual: T::zero(),
            converged: true,
        };
    }
    let target = rel_tol * b_norm;

    let mut x = x0.map_or_else(|| vec![T::zero(); n], <[T]>::to_vec);
    let mut r = b.to_vec();
    if x0.is_some() {
        let ax = apply(&x);
        axpy(-T::one(), &ax, &mut r);
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut iterations = 0;

    while rr.sqrt() > target && iterations < max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= T::zero() {
            break;
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
        iterations += 1;
    }

    let mut true_r = b.to_vec();
    let ax = apply(&x);
    axpy(-T::one(), &ax, &mut true_r);
    let relative_residual = norm2(&true_r) / b_norm;
    CgOutcome {
        x,
        iterations,
        relative_residual,
        converged: relative_residual <= rel_tol || rr.sqrt() <= target,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_spd_system() {
        // A = [[4,1],[1,3]], b = [1,2] → x = [1/11, 7/11]
        let a = [[4.0, 1.0], [1.0, 3.0]];
        let apply = |v: &[f64]| vec![a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]];
        let out = conjugate_gradient(apply, &[1.0, 2.0], None, 1e-14, 10);
        assert!(out.converged);
        assert!((out.x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((out.x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn cg_zero_rhs_returns_zero() {
        let out = conjugate_gradient(|v: &[f64]| v.to_vec(), &[0.0; 3], None, 1e-10, 5);
        assert_eq!(out.x, vec![0.0; 3]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let apply = |v: &[f64]| v.iter().enumerate().map(|(i, x)| (1.0 + i as f64 * 100.0) * x).collect();
        let out = conjugate_gradient(apply, &[1.0; 8], None, 1e-14, 1);
        assert!(!out.converged);
    }
}
