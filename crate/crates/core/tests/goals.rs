mod common;

use common::*;
use goral::goals::*;
use goral::model::ModelParams;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn check_goal_fd(kind: GoalKind, seed: u64, step: f64, tol: f64) -> Result<(), TestCaseError> {
    let mut r = rng(seed);
    let (d, k) = (1 + seed as usize % 4, 2 + seed as usize % 3);
    let m = random_model(&mut r, d, k, 1.0);
    let lambda = 0.1;
    let g = match kind {
        GoalKind::Dev => Goal::dev(random_labeled_set(&mut r, 8, d, k)).unwrap(),
        GoalKind::Ent => Goal::ent(random_pool(&mut r, 0, 8, d)).unwrap(),
        GoalKind::Fir => Goal::fir(random_pool(&mut r, 0, 8, d), lambda).unwrap(),
    };
    let grad = g.gradient(&m).unwrap();
    let fd = fd_gradient(|t| g.value(t).unwrap(), &m, step);
    let e = rel_err(&grad, &fd, 1e-8);
    prop_assert!(e < tol, "{kind} seed {seed}: rel err {e}");
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn goal_gradients_coarse_step(seed in 0u64..100_000) {
        for kind in [GoalKind::Dev, GoalKind::Ent, GoalKind::Fir] {
            check_goal_fd(kind, seed, 1e-4, 1e-6)?;
        }
    }

    #[test]
    fn goal_gradients_fine_step(seed in 0u64..100_000) {
        for kind in [GoalKind::Dev, GoalKind::Ent, GoalKind::Fir] {
            check_goal_fd(kind, seed, 1e-5, 1e-5)?;
        }
    }

    #[test]
    fn fisher_is_symmetric_psd_and_matches_kronecker(seed in 0u64..100_000, d in 1usize..5, k in 2usize..5) {
        let mut r = rng(seed);
        let m = random_model(&mut r, d, k, 1.5);
        let x = random_sample(&mut r, 0, d).features;
        let n = m.len();
        let f = DMatrix::from_row_slice(n, n, &fisher_conditional(&m, &x).unwrap());
        let kron = dense_sample_hessian(&m, &x, 0.0);
        prop_assert!((&f - &kron).amax() < 1e-12);
        prop_assert!((&f - f.transpose()).amax() < 1e-15);
        let eig = f.symmetric_eigen();
        prop_assert!(eig.eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn score_has_zero_expectation(seed in 0u64..100_000, d in 1usize..5, k in 2usize..6) {
        let mut r = rng(seed);
        let m = random_model(&mut r, d, k, 2.0);
        let x = random_sample(&mut r, 0, d).features;
        let p = m.predict_proba(&x).unwrap();
        let mut mean = vec![0.0; m.len()];
        for (y, &py) in p.iter().enumerate() {
            for (a, s) in mean.iter_mut().zip(score(&m, &x, y).unwrap()) {
                *a += py * s;
            }
        }
        prop_assert!(mean.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn trace_closed_form_matches_dense(seed in 0u64..100_000, d in 1usize..5, k in 2usize..5, lambda in 0.0f64..2.0) {
        let mut r = rng(seed);
        let m = random_model(&mut r, d, k, 1.5);
        let x = random_sample(&mut r, 0, d).features;
        let dense = dense_sample_hessian(&m, &x, lambda).trace();
        prop_assert!((sample_hessian_trace(&m, &x, lambda).unwrap() - dense).abs() < 1e-12 * dense.max(1.0));
    }

    #[test]
    fn entropy_goal_bounds(seed in 0u64..100_000, d in 1usize..5, k in 2usize..6) {
        let mut r = rng(seed);
        let m = random_model(&mut r, d, k, 3.0);
        let u = random_pool(&mut r, 0, 10, d);
        let v = tau_ent(&m, &u).unwrap();
        prop_assert!(v <= 0.0);
        prop_assert!(v >= -(10.0 * (k as f64).ln()) - 1e-12);
    }
}

#[test]
fn zero_model_values() {
    let m = ModelParams::<f64>::zeros(2, 2);
    let x = [0.3, -1.2];
    let xtx = 1.0 + 0.09 + 1.44;
    // λ(d+1)K + 0.5·x̃ᵀx̃ per sample at uniform p.
    let tr = sample_hessian_trace(&m, &x, 0.2).unwrap();
    assert!((tr - (0.2 * 6.0 + 0.5 * xtx)).abs() < 1e-14);
    let u = vec![goral::datasets::Sample::new(0, x.to_vec())];
    assert!((tau_fir(&m, &u, 0.2).unwrap() + tr).abs() < 1e-14);
    assert!(grad_tau_ent(&m, &u).unwrap().iter().all(|g| g.abs() < 1e-15));
}

#[test]
fn sharper_predictions_raise_ent_and_fir() {
    let x = [0.7, -0.4];
    let u = vec![goral::datasets::Sample::new(0, x.to_vec())];
    let mut prev: Option<(f64, f64)> = None;
    for s in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
        // Push the logit of class 1 up along the intercept direction.
        let mut m = ModelParams::<f64>::zeros(2, 3);
        m.set(2, 1, s);
        let cur = (tau_ent(&m, &u).unwrap(), tau_fir(&m, &u, 0.1).unwrap());
        if let Some(p) = prev {
            assert!(cur.0 > p.0 && cur.1 > p.1, "{cur:?} after {p:?}");
        }
        prev = Some(cur);
    }
}

#[test]
fn fir_trace_offsets() {
    let mut r = rng(77);
    let m = random_model(&mut r, 3, 4, 1.0);
    let pool = random_pool(&mut r, 0, 5, 3);
    let lambda = 0.25;
    let (used, alt) = Goal::fir(pool.clone(), lambda).unwrap().trace_offsets(3, 4).unwrap();
    assert_eq!((used, alt), (0.25 * 16.0, 1.0));
    // The offset is exactly what separates the goal from its λ = 0 value.
    let with = Goal::fir(pool.clone(), lambda).unwrap().value(&m).unwrap();
    let without = Goal::fir(pool.clone(), 0.0).unwrap().value(&m).unwrap();
    assert!((without - with - used).abs() < 1e-12);
    assert!(Goal::ent(pool).unwrap().trace_offsets(3, 4).is_none());
}
