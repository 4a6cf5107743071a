//! Property-based and statistical invariants of the core modules.

use proptest::prelude::*;

use pseudocal_core::calibration::{apply_isotonic, fit_isotonic, fit_isotonic_values, fit_platt, label_leak_test};
use pseudocal_core::data::{extract_controls, make_folds, UnlabelledSet};
use pseudocal_core::estimators::{residual_variance, soft_estimator};
use pseudocal_core::learners::{cross_fit_predict, expand_poly2, fit_ridge, Basis, LearnerConfig, Penalty};
use pseudocal_core::linalg::Matrix;
use pseudocal_core::simulation::{sample_dgp, DgpParams, DriftSpec};

// ---------------------------------------------------------------------------
// fold assignment
// ---------------------------------------------------------------------------

proptest! {
    #[test]
    fn folds_partition_and_balance(n in 2usize..200, k_off in 0usize..6, seed in any::<u64>()) {
        let k = 2 + k_off.min(n - 2);
        let f = make_folds(n, k, seed).unwrap();
        let mut sizes = vec![0usize; k];
        for &a in f.assignment() {
            prop_assert!((a as usize) < k);
            sizes[a as usize] += 1;
        }
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(*lo >= 1, "every fold appears at least once");
        prop_assert!(hi - lo <= 1, "fold sizes differ by at most one");
        let again = make_folds(n, k, seed).unwrap();
        prop_assert_eq!(f, again);
    }

    #[test]
    fn extract_controls_commutes_with_row_permutation(
        rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 2..20),
        perm_seed in any::<u64>(),
    ) {
        let n = rows.len();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let w = Matrix::from_rows(&refs);
        let u = UnlabelledSet::new(w, vec![2, 0], vec![0.5; n], vec![0.0; n]).unwrap();
        let x = extract_controls(&u);

        // deterministic permutation derived from the seed
        let mut order: Vec<usize> = (0..n).collect();
        let mut s = perm_seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (s % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        let permuted_rows: Vec<&[f64]> = order.iter().map(|&i| rows[i].as_slice()).collect();
        let w2 = Matrix::from_rows(&permuted_rows);
        let u2 = UnlabelledSet::new(w2, vec![2, 0], vec![0.5; n], vec![0.0; n]).unwrap();
        let x2 = extract_controls(&u2);
        for (new_row, &src) in order.iter().enumerate() {
            prop_assert_eq!(x2.row(new_row), x.row(src));
        }
    }
}

// ---------------------------------------------------------------------------
// isotonic regression
// ---------------------------------------------------------------------------

proptest! {
    #[test]
    fn pava_monotone_mean_preserving_idempotent(
        pairs in proptest::collection::vec((0u8..12, any::<bool>()), 1..40),
    ) {
        // integer score grid forces ties
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s as f64 / 12.0).collect();
        let labels: Vec<u8> = pairs.iter().map(|(_, l)| u8::from(*l)).collect();
        let m = fit_isotonic(&scores, &labels).unwrap();

        // knots strictly increasing in x, non-decreasing in y, y in [0,1]
        for w in m.knots_x().windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        for w in m.knots_y().windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-15);
        }
        for &y in m.knots_y() {
            prop_assert!((0.0..=1.0).contains(&y));
        }

        // mean preservation over the training points
        let fitted_mean: f64 = scores.iter().map(|&s| m.apply(s)).sum::<f64>() / scores.len() as f64;
        let label_mean: f64 = labels.iter().map(|&l| l as f64).sum::<f64>() / labels.len() as f64;
        prop_assert!((fitted_mean - label_mean).abs() < 1e-12);

        // idempotence: refitting the fitted values changes nothing
        let again = fit_isotonic_values(m.knots_x(), m.knots_y()).unwrap();
        prop_assert_eq!(again.knots_x(), m.knots_x());
        for (a, b) in again.knots_y().iter().zip(m.knots_y()) {
            prop_assert!((a - b).abs() < 1e-15);
        }

        // interpolation is monotone in the score argument
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=60 {
            let v = m.apply(i as f64 / 60.0);
            prop_assert!(v >= prev - 1e-15);
            prev = v;
        }
    }
}

// ---------------------------------------------------------------------------
// learners
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn ols_residuals_orthogonal_to_design(
        xs in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 8..40),
        ys in proptest::collection::vec(-5.0f64..5.0, 40),
    ) {
        let n = xs.len();
        let rows: Vec<[f64; 2]> = xs.iter().map(|&(a, b)| [a, a * a + b]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = Matrix::from_rows(&refs);
        let y = &ys[..n];
        if let Ok(m) = fit_ridge(&x, y, 0.0) {
            let fitted: Vec<f64> = (0..n).map(|i| m.predict_basis_row(x.row(i))).collect();
            for j in 0..2 {
                let dot: f64 = (0..n).map(|i| (y[i] - fitted[i]) * x.get(i, j)).sum();
                prop_assert!(dot.abs() < 1e-8 * n as f64, "col {}: {}", j, dot);
            }
        }
    }
}

#[test]
fn poly2_dimension_formula() {
    for d in 0..6 {
        let x = Matrix::zeros(3, d);
        let e = expand_poly2(&x);
        assert_eq!(e.cols(), 2 * d + d * d.saturating_sub(1) / 2);
    }
}

// ---------------------------------------------------------------------------
// estimator invariances
// ---------------------------------------------------------------------------

fn dgp_unlabelled(n: usize, seed: u64) -> UnlabelledSet {
    let params = DgpParams { n, ..DgpParams::default() };
    sample_dgp(&params, &DriftSpec::none(), seed).unwrap().unlabelled
}

#[test]
fn soft_estimator_invariant_under_affine_controls() {
    let u = dgp_unlabelled(400, 21);
    let folds = make_folds(400, 5, 3).unwrap();
    let ols = LearnerConfig { basis: Basis::Linear, penalty: Penalty::OlsFallback };
    let base = soft_estimator(&u, &folds, &ols).unwrap();

    // invertible affine map of the three controls
    let a = [[2.0, 0.3, 0.0], [0.0, -1.5, 0.4], [0.1, 0.0, 0.7]];
    let b = [1.0, -2.0, 0.5];
    let n = u.len();
    let mut w2 = Matrix::zeros(n, 3);
    for i in 0..n {
        let r = u.w().row(i);
        for out in 0..3 {
            let mut v = b[out];
            for k in 0..3 {
                v += a[out][k] * r[k];
            }
            w2.set(i, out, v);
        }
    }
    let u2 = UnlabelledSet::new(w2, vec![0, 1, 2], u.p().to_vec(), u.y().to_vec()).unwrap();
    let t2 = soft_estimator(&u2, &folds, &ols).unwrap();
    assert!(
        (base.tau.tau_hat - t2.tau.tau_hat).abs() < 1e-6,
        "{} vs {}",
        base.tau.tau_hat,
        t2.tau.tau_hat
    );
}

#[test]
fn soft_estimator_invariant_under_outcome_shift_in_span() {
    // leave-one-out, lambda = 0, linear learner: adding a linear function of
    // X to the outcome moves m-hat by exactly that function
    let n = 40;
    let u = dgp_unlabelled(n, 8);
    let folds = make_folds(n, n, 0).unwrap();
    let ols = LearnerConfig { basis: Basis::Linear, penalty: Penalty::Fixed(0.0) };
    let base = soft_estimator(&u, &folds, &ols).unwrap();

    let shifted: Vec<f64> = (0..n)
        .map(|i| {
            let r = u.w().row(i);
            u.y()[i] + (3.0 * r[0] - 2.0 * r[1] + 0.5 * r[2] + 4.0)
        })
        .collect();
    let u2 = UnlabelledSet::new(u.w().clone(), vec![0, 1, 2], u.p().to_vec(), shifted).unwrap();
    let t2 = soft_estimator(&u2, &folds, &ols).unwrap();
    assert!(
        (base.tau.tau_hat - t2.tau.tau_hat).abs() < 1e-6,
        "{} vs {}",
        base.tau.tau_hat,
        t2.tau.tau_hat
    );
}

#[test]
fn leak_test_invariant_under_affine_rescaling() {
    let params = DgpParams { n: 500, ..DgpParams::default() };
    let s = sample_dgp(&params, &DriftSpec::none(), 5).unwrap();
    let u = &s.unlabelled;
    let x = extract_controls(u);
    let base = label_leak_test(u.p(), &x, &s.g).unwrap();

    let n = u.len();
    let mut x2 = Matrix::zeros(n, 3);
    for i in 0..n {
        let r = x.row(i);
        x2.set(i, 0, 100.0 * r[0] - 7.0);
        x2.set(i, 1, -0.01 * r[1] + 3.0);
        x2.set(i, 2, 5.0 * r[2] + 0.5 * r[0]);
    }
    let t2 = label_leak_test(u.p(), &x2, &s.g).unwrap();
    assert!(
        (base.wald_stat - t2.wald_stat).abs() < 1e-6 * base.wald_stat.max(1.0),
        "{} vs {}",
        base.wald_stat,
        t2.wald_stat
    );
    assert!((base.p_value - t2.p_value).abs() < 1e-6);
}

// ---------------------------------------------------------------------------
// generator moment checks
// ---------------------------------------------------------------------------

#[test]
fn dgp_satisfies_calibration_and_conditional_variance() {
    let params = DgpParams { n: 100_000, ..DgpParams::default() };
    let s = sample_dgp(&params, &DriftSpec::none(), 123).unwrap();
    let p = s.unlabelled.p();
    let n = p.len() as f64;

    // E[p | X] = r(X): regression of p on r has slope ~ 1
    let r_mean = s.r_oracle.iter().sum::<f64>() / n;
    let p_mean = p.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_r = 0.0;
    for i in 0..p.len() {
        cov += (s.r_oracle[i] - r_mean) * (p[i] - p_mean);
        var_r += (s.r_oracle[i] - r_mean) * (s.r_oracle[i] - r_mean);
    }
    let slope = cov / var_r;
    assert!((slope - 1.0).abs() < 0.02, "slope {slope}");

    // calibration of G against p: regression of g on p has slope ~ 1
    let g_mean = s.g.iter().map(|&g| g as f64).sum::<f64>() / n;
    let mut cov_gp = 0.0;
    let mut var_p = 0.0;
    for i in 0..p.len() {
        cov_gp += (p[i] - p_mean) * (s.g[i] as f64 - g_mean);
        var_p += (p[i] - p_mean) * (p[i] - p_mean);
    }
    let slope_gp = cov_gp / var_p;
    assert!((slope_gp - 1.0).abs() < 0.02, "slope {slope_gp}");

    // V* = sigma_u^2 E[r (1 - r)]
    let v_star = residual_variance(p, &s.r_oracle);
    let target = params.sigma_u * params.sigma_u
        * s.r_oracle.iter().map(|&r| r * (1.0 - r)).sum::<f64>()
        / n;
    assert!(
        (v_star - target).abs() < 0.02 * target,
        "V* {v_star} vs analytic {target}"
    );
}

#[test]
fn cross_fit_recovers_conditional_variance_of_score() {
    // mean squared OOF residual of p on X matches sigma_u^2 E[r(1-r)]
    let params = DgpParams { n: 5000, ..DgpParams::default() };
    let s = sample_dgp(&params, &DriftSpec::none(), 77).unwrap();
    let folds = make_folds(5000, 5, 1).unwrap();
    let x = extract_controls(&s.unlabelled);
    let fit = cross_fit_predict(&x, s.unlabelled.p(), &folds, &LearnerConfig::nuisance_default())
        .unwrap();
    let mse = residual_variance(s.unlabelled.p(), &fit.oof_predictions);
    let target = params.sigma_u * params.sigma_u
        * s.r_oracle.iter().map(|&r| r * (1.0 - r)).sum::<f64>()
        / 5000.0;
    assert!(
        (mse - target).abs() < 0.10 * target,
        "oof mse {mse} vs analytic {target}"
    );
}

#[test]
fn platt_slope_vanishes_without_association() {
    // labels independent of scores, balanced classes, n = 10^4
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
    let m = fit_platt(&scores, &labels).unwrap();
    assert!(m.a.abs() < 0.1, "a = {}", m.a);
    assert!(m.b.abs() < 0.2, "b = {}", m.b);
}

// ---------------------------------------------------------------------------
// interpolation of the isotonic calibrator
// ---------------------------------------------------------------------------

#[test]
fn isotonic_midpoint_interpolation() {
    let m = fit_isotonic(&[0.0, 1.0], &[0, 1]).unwrap();
    assert!((apply_isotonic(&m, 0.5) - 0.5).abs() < 1e-15);
}
