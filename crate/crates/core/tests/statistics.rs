use nalgebra::{DMatrix, DVector};
use pcis_core::ridge::beta_closed_form;
use pcis_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense_solve(rows: &[Vec<f64>], targets: &[f64], lambda: f64) -> DVector<f64> {
    let d = rows[0].len();
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(targets);
    let v = x.transpose() * &x + DMatrix::identity(d, d) * lambda;
    v.lu().solve(&(x.transpose() * y)).unwrap()
}

#[test]
fn ridge_matches_dense_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let d = rng.random_range(1..=40);
        let n = rng.random_range(0..=120);
        let lambda = rng.random_range(0.1..3.0);
        let rows: Vec<Vec<f64>> = (0..n.max(1)).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let rows = &rows[..n];
        let targets: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let fitted = RidgeStage::new(d, lambda).unwrap().with_refactor_every(7).fit(rows, &targets).unwrap();
        let oracle = if n == 0 { DVector::zeros(d) } else { dense_solve(rows, &targets, lambda) };
        for k in 0..d {
            assert!((fitted.theta_hat()[k] - oracle[k]).abs() < 1e-8, "trial {trial} coord {k}");
        }
        let phi: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = fitted.sigma_via_inverse(&phi).unwrap();
        let b = fitted.sigma_via_cholesky(&phi).unwrap();
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn sigma_closed_form_for_repeated_unit_rows() {
    for d in [1, 3, 40] {
        for lambda in [0.5, 1.0, 2.0] {
            for k in [0usize, 1, 5, 100] {
                let mut e = vec![0.0; d];
                e[d - 1] = 1.0;
                let rows = vec![e.clone(); k];
                let fitted = RidgeStage::new(d, lambda).unwrap().fit(&rows, &vec![1.0; k]).unwrap();
                let expected = (1.0 / (lambda + k as f64)).sqrt();
                assert!((fitted.sigma(&e).unwrap() - expected).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn beta_monotone_in_samples_antitone_in_delta() {
    for d in [1, 4, 108] {
        let s = (d as f64).sqrt();
        let mut prev = 0.0;
        for t in [0usize, 1, 10, 100, 10_000, 1_000_000] {
            let b = beta_closed_form(0.5, s, 0.05, t, 1.0, d).unwrap();
            assert!(b >= prev);
            prev = b;
        }
        let mut prev = f64::INFINITY;
        for delta in [1e-6, 1e-3, 0.01, 0.05, 0.5, 0.99] {
            let b = beta_closed_form(0.5, s, delta, 100, 1.0, d).unwrap();
            assert!(b < prev);
            prev = b;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_stays_symmetric_and_widths_shrink(seed in any::<u64>(), d in 1usize..12, n in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let base = RidgeStage::new(d, 1.0).unwrap();
        let fitted = base.fit(&rows, &targets).unwrap();
        prop_assert!(fitted.gram().is_symmetric(1e-12));
        prop_assert!(fitted.gram().identity_residual(fitted.gram_inverse()) < 1e-8);
        let phi: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sigma = fitted.sigma(&phi).unwrap();
        prop_assert!(sigma <= norm + 1e-12);
        prop_assert!(sigma <= base.sigma(&phi).unwrap() + 1e-12);
        let mut more = rows.clone();
        more.push(phi.clone());
        let mut more_targets = targets.clone();
        more_targets.push(0.5);
        let refit = base.fit(&more, &more_targets).unwrap();
        prop_assert!(refit.sigma(&phi).unwrap() <= sigma + 1e-12);
    }

    #[test]
    fn refit_targets_equals_fresh_fit(seed in any::<u64>(), d in 1usize..8, n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let base = RidgeStage::new(d, 1.0).unwrap();
        let refit = base.fit(&rows, &a).unwrap().refit_targets(&rows, &b).unwrap();
        let fresh = base.fit(&rows, &b).unwrap();
        for (x, y) in refit.theta_hat().iter().zip(fresh.theta_hat()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn self_normalized_coverage_monte_carlo() {
    // Bounded-noise linear model; the width must cover the true mean at a
    // fixed query point in at least 1 − δ of the trials.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d, n, delta) = (3usize, 60usize, 0.1);
    let theta = [0.2, 0.3, 0.4];
    let query = [0.3, 0.3, 0.4];
    let truth: f64 = theta.iter().zip(&query).map(|(t, q)| t * q).sum();
    let trials = 2000;
    let mut covered = 0;
    for _ in 0..trials {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut r: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|x| *x /= s);
                r
            })
            .collect();
        let targets: Vec<f64> = rows
            .iter()
            .map(|r| {
                let p: f64 = r.iter().zip(&theta).map(|(a, b)| a * b).sum();
                f64::from(u8::from(rng.random::<f64>() < p))
            })
            .collect();
        let beta = beta_closed_form(0.5, (d as f64).sqrt(), delta, n, 1.0, d).unwrap();
        let fit = RidgeStage::new(d, 1.0).unwrap().with_beta(beta).fit(&rows, &targets).unwrap();
        if fit.lower_confidence(&query, 0.0).unwrap() <= truth {
            covered += 1;
        }
    }
    assert!(covered as f64 / trials as f64 >= 1.0 - delta);
}
