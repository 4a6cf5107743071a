//! Post-hoc calibration (isotonic regression via pool-adjacent-violators,
//! Platt scaling) and the conditional-calibration "label-leak" test.
//!
//! The leak test regresses `G` on `(1, p, X)` by a linear probability model
//! with heteroskedasticity-robust covariance and tests all `X` coefficients
//! jointly: under conditional calibration `E[G | p, X] = p`, the controls
//! carry no information about `G` beyond the score, so a rejection flags a
//! structural failure the drift bound does not cover.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

// resolves f64 math to libm in no_std builds
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::learners::{fit_logistic, sigmoid, PROB_CLIP};
use crate::linalg::{self, Matrix};
use crate::prob::chi_square_sf;

/// Monotone non-decreasing step/interpolation calibrator. One knot per
/// distinct raw score; `knots_y` carries the pooled (block-mean) fitted
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicModel {
    knots_x: Vec<f64>,
    knots_y: Vec<f64>,
}

impl IsotonicModel {
    pub fn knots_x(&self) -> &[f64] {
        &self.knots_x
    }

    pub fn knots_y(&self) -> &[f64] {
        &self.knots_y
    }

    pub fn apply(&self, score: f64) -> f64 {
        apply_isotonic(self, score)
    }
}

/// Pool-adjacent-violators fit of binary labels as a non-decreasing function
/// of the score. Ties in the score are pre-pooled (averaged) before PAVA.
pub fn fit_isotonic(scores: &[f64], labels: &[u8]) -> Result<IsotonicModel> {
    let values: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    fit_isotonic_values(scores, &values)
}

/// General L2 isotonic regression: the non-decreasing step function
/// minimizing the sum of squared deviations from `values` ordered by score.
pub fn fit_isotonic_values(scores: &[f64], values: &[f64]) -> Result<IsotonicModel> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.len() != values.len() {
        return Err(Error::InvalidData(
            "scores and values must have equal length".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("NaN score"));

    // pre-pool ties: one (x, mean, weight) node per distinct score
    let mut xs: Vec<f64> = Vec::new();
    let mut means: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &i in &order {
        let (x, y) = (scores[i], values[i]);
        if xs.last() == Some(&x) {
            let w = weights.last_mut().unwrap();
            let m = means.last_mut().unwrap();
            *m = (*m * *w + y) / (*w + 1.0);
            *w += 1.0;
        } else {
            xs.push(x);
            means.push(y);
            weights.push(1.0);
        }
    }

    // PAVA over the pooled nodes: blocks as (mean, weight, node count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(xs.len());
    for (&m, &w) in means.iter().zip(&weights) {
        blocks.push((m, w, 1));
        while blocks.len() >= 2 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, c1 + c2));
        }
    }

    let mut knots_y = Vec::with_capacity(xs.len());
    for &(m, _, count) in &blocks {
        for _ in 0..count {
            knots_y.push(m);
        }
    }
    Ok(IsotonicModel { knots_x: xs, knots_y })
}

/// Piecewise-linear interpolation between knots, clamped to the boundary
/// knot values outside the fitted score range.
pub fn apply_isotonic(model: &IsotonicModel, score: f64) -> f64 {
    let xs = &model.knots_x;
    let ys = &model.knots_y;
    if score <= xs[0] {
        return ys[0];
    }
    if score >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    // first knot strictly above `score`
    let hi = xs.partition_point(|&x| x <= score);
    let lo = hi - 1;
    if xs[lo] == score {
        return ys[lo];
    }
    let t = (score - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

/// Platt scaling: penalized logistic fit of labels on the raw score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattModel {
    /// slope on the raw score
    pub a: f64,
    /// intercept
    pub b: f64,
}

impl PlattModel {
    pub fn apply(&self, score: f64) -> f64 {
        sigmoid(self.a * score + self.b).clamp(PROB_CLIP.0, PROB_CLIP.1)
    }
}

pub fn fit_platt(scores: &[f64], labels: &[u8]) -> Result<PlattModel> {
    if scores.len() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            got: scores.len(),
        });
    }
    let design = Matrix::column(scores);
    let m = fit_logistic(&design, labels, 200, 1e-9)?;
    Ok(PlattModel {
        a: m.coefficients[1],
        b: m.coefficients[0],
    })
}

/// Wald test of the joint significance of the `X` coefficients in the linear
/// probability regression of `G` on `(1, p, X)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabelLeakResult {
    pub wald_stat: f64,
    pub df: usize,
    pub p_value: f64,
    pub x_coefficients: Vec<f64>,
}

/// Label-leak diagnostic on the labelled set.
///
/// Zero-variance control columns cannot be tested: they are dropped from the
/// regression, reported with coefficient zero, and the degrees of freedom
/// shrink accordingly. A singular design falls back to a tiny ridge.
pub fn label_leak_test(p: &[f64], x: &Matrix, g: &[u8]) -> Result<LabelLeakResult> {
    let n = p.len();
    let d_x = x.cols();
    if d_x == 0 {
        return Err(Error::DegenerateLeakTest);
    }
    if x.rows() != n || g.len() != n {
        return Err(Error::InvalidData(
            "p, x, g must have the same number of rows".to_string(),
        ));
    }
    if n <= d_x + 2 {
        return Err(Error::TooFewRows {
            needed: d_x + 3,
            got: n,
        });
    }

    // identify testable (non-constant) control columns
    let mut testable = Vec::new();
    for j in 0..d_x {
        let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        if var > 1e-24 {
            testable.push(j);
        }
    }
    if testable.is_empty() {
        return Err(Error::DegenerateLeakTest);
    }

    // design: intercept, p, testable X columns
    let dim = 2 + testable.len();
    let mut a = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    let mut row = vec![0.0; dim];
    for i in 0..n {
        row[0] = 1.0;
        row[1] = p[i];
        for (jj, &j) in testable.iter().enumerate() {
            row[2 + jj] = x.get(i, j);
        }
        let gi = g[i] as f64;
        for q in 0..dim {
            b[q] += row[q] * gi;
            for r in q..dim {
                a[q * dim + r] += row[q] * row[r];
            }
        }
    }
    for q in 0..dim {
        for r in 0..q {
            a[q * dim + r] = a[r * dim + q];
        }
    }
    let a_inv = match linalg::invert_spd(&a, dim, linalg::PIVOT_TOL) {
        Ok(v) => v,
        Err(_) => {
            let mut ar = a.clone();
            for q in 0..dim {
                ar[q * dim + q] += 1e-8;
            }
            linalg::invert_spd(&ar, dim, linalg::PIVOT_TOL)?
        }
    };
    let mut beta = vec![0.0; dim];
    for q in 0..dim {
        for r in 0..dim {
            beta[q] += a_inv[q * dim + r] * b[r];
        }
    }

    // HC0 sandwich: meat = sum e_i^2 d_i d_i'
    let mut meat = vec![0.0; dim * dim];
    for i in 0..n {
        row[0] = 1.0;
        row[1] = p[i];
        for (jj, &j) in testable.iter().enumerate() {
            row[2 + jj] = x.get(i, j);
        }
        let fit: f64 = row.iter().zip(&beta).map(|(u, v)| u * v).sum();
        let e2 = (g[i] as f64 - fit).powi(2);
        for q in 0..dim {
            for r in q..dim {
                meat[q * dim + r] += e2 * row[q] * row[r];
            }
        }
    }
    for q in 0..dim {
        for r in 0..q {
            meat[q * dim + r] = meat[r * dim + q];
        }
    }
    // V = A^-1 meat A^-1
    let mut tmp = vec![0.0; dim * dim];
    for q in 0..dim {
        for r in 0..dim {
            let mut s = 0.0;
            for k in 0..dim {
                s += a_inv[q * dim + k] * meat[k * dim + r];
            }
            tmp[q * dim + r] = s;
        }
    }
    let mut v = vec![0.0; dim * dim];
    for q in 0..dim {
        for r in 0..dim {
            let mut s = 0.0;
            for k in 0..dim {
                s += tmp[q * dim + k] * a_inv[k * dim + r];
            }
            v[q * dim + r] = s;
        }
    }

    // Wald statistic over the tested X coefficients
    let t = testable.len();
    let mut v_xx = vec![0.0; t * t];
    let mut beta_x = vec![0.0; t];
    for q in 0..t {
        beta_x[q] = beta[2 + q];
        for r in 0..t {
            v_xx[q * t + r] = v[(2 + q) * dim + (2 + r)];
        }
    }
    let sol = linalg::solve_spd(&v_xx, t, &beta_x, linalg::PIVOT_TOL).or_else(|_| {
        let mut vr = v_xx.clone();
        for q in 0..t {
            vr[q * t + q] += 1e-16;
        }
        linalg::solve_spd(&vr, t, &beta_x, linalg::PIVOT_TOL)
    })?;
    let wald: f64 = beta_x.iter().zip(&sol).map(|(u, v)| u * v).sum();
    let wald = wald.max(0.0);

    let mut x_coefficients = vec![0.0; d_x];
    for (jj, &j) in testable.iter().enumerate() {
        x_coefficients[j] = beta[2 + jj];
    }
    Ok(LabelLeakResult {
        wald_stat: wald,
        df: t,
        p_value: chi_square_sf(wald, t),
        x_coefficients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotonic_already_monotone() {
        let m = fit_isotonic(&[1.0, 2.0, 3.0], &[0, 0, 1]).unwrap();
        assert_eq!(m.knots_y(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn isotonic_single_pool() {
        let m = fit_isotonic(&[1.0, 2.0, 3.0], &[1, 0, 1]).unwrap();
        assert_eq!(m.knots_y(), &[0.5, 0.5, 1.0]);
    }

    #[test]
    fn isotonic_ties_are_prepooled() {
        let m = fit_isotonic(&[1.0, 1.0, 2.0], &[0, 1, 1]).unwrap();
        assert_eq!(m.knots_x(), &[1.0, 2.0]);
        assert_eq!(m.knots_y(), &[0.5, 1.0]);
    }

    #[test]
    fn isotonic_empty_input() {
        assert_eq!(fit_isotonic(&[], &[]), Err(Error::EmptyInput));
    }

    #[test]
    fn isotonic_mean_preservation() {
        let scores = [0.1, 0.4, 0.2, 0.9, 0.5, 0.3];
        let labels = [1u8, 0, 1, 1, 0, 0];
        let m = fit_isotonic(&scores, &labels).unwrap();
        let fitted_mean: f64 = scores.iter().map(|&s| m.apply(s)).sum::<f64>() / 6.0;
        let label_mean = labels.iter().map(|&l| l as f64).sum::<f64>() / 6.0;
        assert!((fitted_mean - label_mean).abs() < 1e-12);
    }

    #[test]
    fn apply_clamps_and_interpolates() {
        let m = IsotonicModel {
            knots_x: alloc::vec![1.0, 2.0, 4.0],
            knots_y: alloc::vec![0.2, 0.2, 0.6],
        };
        assert_eq!(apply_isotonic(&m, 0.0), 0.2);
        assert_eq!(apply_isotonic(&m, 9.0), 0.6);
        assert_eq!(apply_isotonic(&m, 2.0), 0.2);
        assert!((apply_isotonic(&m, 3.0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn platt_sign_of_association() {
        let scores: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let labels: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.5)).collect();
        let m = fit_platt(&scores, &labels).unwrap();
        assert!(m.a > 0.0);
    }

    #[test]
    fn platt_constant_score_reduces_to_intercept() {
        let scores = [0.3; 8];
        let labels = [1u8, 1, 1, 0, 1, 1, 0, 1];
        let m = fit_platt(&scores, &labels).unwrap();
        assert_eq!(m.a, 0.0);
        assert!((m.b - 3.0_f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn leak_test_rejects_strong_leak_and_handles_zero_column() {
        // deterministic construction: g depends on x1 beyond p
        let n = 400;
        let mut p = Vec::new();
        let mut g = Vec::new();
        let mut xr = Vec::new();
        let mut s = 0.37_f64;
        for _ in 0..n {
            s = (s * 997.3 + 0.19).fract();
            let pv = 0.2 + 0.6 * s;
            let x1 = 2.0 * ((s * 31.0).fract() - 0.5);
            p.push(pv);
            xr.push([x1, 0.0]);
            let mean = (pv + 0.4 * x1).clamp(0.0, 1.0);
            g.push(u8::from((s * 113.0).fract() < mean));
        }
        let refs: Vec<&[f64]> = xr.iter().map(|r| r.as_slice()).collect();
        let x = Matrix::from_rows(&refs);
        let res = label_leak_test(&p, &x, &g).unwrap();
        assert_eq!(res.df, 1, "zero-variance column must not be tested");
        assert_eq!(res.x_coefficients[1], 0.0);
        assert!(res.x_coefficients[0] > 0.1);
        assert!(res.p_value < 0.01);
    }

    #[test]
    fn leak_test_degenerate_without_controls() {
        let x = Matrix::zeros(10, 0);
        let p = [0.5; 10];
        let g = [0u8, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        assert_eq!(label_leak_test(&p, &x, &g), Err(Error::DegenerateLeakTest));
    }
}
