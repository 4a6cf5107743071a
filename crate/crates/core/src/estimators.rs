//! Estimators of the partial association `tau` and the analytic quantities
//! around them: the soft moment estimator with sandwich variance, the hard
//! pseudo-label estimator, the per-threshold attenuation factor, the
//! confident-subset (FixMatch-style) estimator, the supervised labelled-only
//! baseline, and the calibration-drift sensitivity bound.
//!
//! All sample means use divisor `n`. Pseudo-labels use the strict rule
//! `1{p > threshold}`, so ties at the threshold go to zero.
//!
//! Conventions. The soft estimator residualises both the score and the
//! outcome with the caller's learner. The hard estimator residualises the
//! pseudo-label *and* the outcome by cross-fitted OLS on the linear basis,
//! which makes binarisation at 0.5 of an already-binary score an exact
//! identity with the OLS-learner soft estimator. The confident-subset
//! estimator keeps the full-sample outcome nuisance (restricting it to the
//! subset) and residualises the in-subset pseudo-label by cross-fitted OLS
//! inside the subset; the attenuation factor it reports uses in-subset
//! residuals on both sides.

use alloc::vec::Vec;

use crate::data::{
    extract_controls, EstimatorMethod, FoldAssignment, LabelledSet, Residuals, TauEstimate,
    UnlabelledSet,
};
use crate::error::{Error, Result};
use crate::learners::{cross_fit_predict, LearnerConfig, NuisanceFit};
use crate::linalg;

/// Below this residual score variance the moment equation is treated as
/// collapsed (uninformative about tau).
pub const EPSILON_V_STAR: f64 = 1e-6;

/// Minimum confident-subset size.
pub const CONFIDENT_FLOOR: usize = 20;

/// Soft moment estimate together with its influence values and nuisance fits.
#[derive(Debug, Clone)]
pub struct SoftEstimatorDetail {
    pub tau: TauEstimate,
    pub v_star_hat: f64,
    /// sample mean of `(2p - 1)(Y - m_hat(X))`
    pub numerator: f64,
    /// influence values at the estimated tau; mean-zero by construction
    pub psi: Vec<f64>,
    pub r_hat: NuisanceFit,
    pub m_hat: NuisanceFit,
    /// sample mean of `|2p - 1|`, kept for the drift sensitivity bound
    pub mean_abs_signed_score: f64,
}

impl SoftEstimatorDetail {
    /// Implied sandwich standard error `sqrt(mean psi^2) / (2 V* sqrt(n))`.
    pub fn se_implied(&self) -> f64 {
        self.tau.se
    }
}

/// Attenuation factor estimate at one threshold.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KappaEstimate {
    pub threshold: f64,
    pub kappa_hat: f64,
    pub n_effective: usize,
}

/// Confident-subset estimate: hard moment on `C = {max(p, 1-p) > threshold}`.
#[derive(Debug, Clone)]
pub struct ConfidentSubsetResult {
    pub tau: TauEstimate,
    pub subset_size: usize,
    pub kappa_fm: f64,
    pub threshold: f64,
}

/// Worst-case asymptotic bias envelope under bounded calibration drift.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBound {
    pub delta: f64,
    pub bound: f64,
    pub mean_abs_signed_score: f64,
}

/// Mean of squared soft residuals (divisor n): the empirical `V*`.
pub fn residual_variance(p: &[f64], r_hat: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), r_hat.len());
    if p.is_empty() {
        return 0.0;
    }
    p.iter()
        .zip(r_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / p.len() as f64
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// Soft moment estimator from already-computed out-of-fold nuisances.
///
/// `tau_hat = mean[(2p-1)(Y - m_hat)] / (2 mean[(p - r_hat)^2])`, with the
/// influence values `psi_i = (2p_i-1)(Y_i - m_hat_i) - 2 tau_hat (p_i - r_hat_i)^2`.
pub fn soft_estimator_with_nuisances(
    data: &UnlabelledSet,
    r_hat: NuisanceFit,
    m_hat: NuisanceFit,
) -> Result<SoftEstimatorDetail> {
    let n = data.len();
    let p = data.p();
    let y = data.y();
    if r_hat.oof_predictions.len() != n || m_hat.oof_predictions.len() != n {
        return Err(Error::InvalidData(
            "nuisance predictions must match the sample size".into(),
        ));
    }
    let v_star_hat = residual_variance(p, &r_hat.oof_predictions);
    if v_star_hat <= EPSILON_V_STAR {
        return Err(Error::VStarCollapse {
            v_star: v_star_hat,
            epsilon: EPSILON_V_STAR,
        });
    }
    let numerator = mean(
        p.iter()
            .zip(y)
            .zip(&m_hat.oof_predictions)
            .map(|((&pi, &yi), &mi)| (2.0 * pi - 1.0) * (yi - mi)),
        n,
    );
    let tau_hat = numerator / (2.0 * v_star_hat);
    let psi: Vec<f64> = (0..n)
        .map(|i| {
            let a = p[i] - r_hat.oof_predictions[i];
            (2.0 * p[i] - 1.0) * (y[i] - m_hat.oof_predictions[i]) - 2.0 * tau_hat * a * a
        })
        .collect();
    let psi2 = mean(psi.iter().map(|v| v * v), n);
    let se = libm::sqrt(psi2) / (2.0 * v_star_hat * libm::sqrt(n as f64));
    let mean_abs_signed_score = mean(p.iter().map(|&pi| libm::fabs(2.0 * pi - 1.0)), n);
    Ok(SoftEstimatorDetail {
        tau: TauEstimate::new(tau_hat, se, n, EstimatorMethod::Soft),
        v_star_hat,
        numerator,
        psi,
        r_hat,
        m_hat,
        mean_abs_signed_score,
    })
}

/// Soft moment estimator with cross-fitted nuisances from the given learner.
pub fn soft_estimator(
    data: &UnlabelledSet,
    folds: &FoldAssignment,
    learner: &LearnerConfig,
) -> Result<SoftEstimatorDetail> {
    let n = data.len();
    // two rows per fold, except leave-one-out which trains on n - 1 rows
    if n < 2 * folds.k() && folds.k() != n {
        return Err(Error::TooFewRows {
            needed: 2 * folds.k(),
            got: n,
        });
    }
    let x = extract_controls(data);
    let r_hat = cross_fit_predict(&x, data.p(), folds, learner)?;
    let m_hat = cross_fit_predict(&x, data.y(), folds, learner)?;
    soft_estimator_with_nuisances(data, r_hat, m_hat)
}

/// Strict pseudo-label `1{p > threshold}` as floats, or an error when it
/// carries no variation.
fn pseudo_labels(p: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::InvalidValue(
            alloc::format!("threshold {threshold} outside (0,1)"),
        ));
    }
    let gt: Vec<f64> = p.iter().map(|&v| f64::from(v > threshold)).collect();
    let ones = gt.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == gt.len() {
        return Err(Error::DegenerateThreshold { threshold });
    }
    Ok(gt)
}

/// Hard-estimator moment from precomputed nuisances. `e_hard` are the
/// out-of-fold predictions of `E[Gtilde | X]`.
pub fn hard_estimator_with_nuisances(
    data: &UnlabelledSet,
    threshold: f64,
    m_hat: &NuisanceFit,
    e_hard: &NuisanceFit,
) -> Result<TauEstimate> {
    let n = data.len();
    let p = data.p();
    let y = data.y();
    let gt = pseudo_labels(p, threshold)?;
    let a_hard: Vec<f64> = gt
        .iter()
        .zip(&e_hard.oof_predictions)
        .map(|(g, e)| g - e)
        .collect();
    let denom = mean(a_hard.iter().map(|a| a * a), n);
    if denom <= EPSILON_V_STAR {
        return Err(Error::DegenerateThreshold { threshold });
    }
    let numerator = mean(
        gt.iter()
            .zip(y)
            .zip(&m_hat.oof_predictions)
            .map(|((&g, &yi), &mi)| (2.0 * g - 1.0) * (yi - mi)),
        n,
    );
    let tau_hat = numerator / (2.0 * denom);
    let psi2 = mean(
        (0..n).map(|i| {
            let v = (2.0 * gt[i] - 1.0) * (y[i] - m_hat.oof_predictions[i])
                - 2.0 * tau_hat * a_hard[i] * a_hard[i];
            v * v
        }),
        n,
    );
    let se = libm::sqrt(psi2) / (2.0 * denom * libm::sqrt(n as f64));
    Ok(TauEstimate::new(tau_hat, se, n, EstimatorMethod::Hard))
}

/// Hard pseudo-label estimator: `1{p > threshold}` in place of the score,
/// with outcome and pseudo-label both residualised by cross-fitted OLS on
/// the linear basis.
pub fn hard_estimator(
    data: &UnlabelledSet,
    threshold: f64,
    folds: &FoldAssignment,
) -> Result<TauEstimate> {
    let x = extract_controls(data);
    let ols = LearnerConfig::hard_residualiser();
    let gt = pseudo_labels(data.p(), threshold)?;
    let m_hat = cross_fit_predict(&x, data.y(), folds, &ols)?;
    let e_hard = cross_fit_predict(&x, &gt, folds, &ols)?;
    hard_estimator_with_nuisances(data, threshold, &m_hat, &e_hard)
}

/// Attenuation factor from paired residuals: the no-intercept least-squares
/// slope of the soft residual on the hard residual.
pub fn kappa_from_residuals(res: &Residuals) -> Result<KappaEstimate> {
    let n = res.a_hard.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let denom = mean(res.a_hard.iter().map(|a| a * a), n);
    if denom <= EPSILON_V_STAR {
        return Err(Error::DegenerateThreshold {
            threshold: res.threshold,
        });
    }
    let cov = mean(
        res.a_hard.iter().zip(&res.a_soft).map(|(h, s)| h * s),
        n,
    );
    Ok(KappaEstimate {
        threshold: res.threshold,
        kappa_hat: cov / denom,
        n_effective: n,
    })
}

/// Per-threshold attenuation factor: soft residuals from the Step-1 learner,
/// hard residuals from cross-fitted OLS.
pub fn kappa_hat(
    data: &UnlabelledSet,
    threshold: f64,
    folds: &FoldAssignment,
    learner: &LearnerConfig,
) -> Result<KappaEstimate> {
    let x = extract_controls(data);
    let r_hat = cross_fit_predict(&x, data.p(), folds, learner)?;
    kappa_hat_with_soft(data, threshold, folds, &r_hat)
}

/// As [`kappa_hat`] with the soft-score nuisance already computed.
pub fn kappa_hat_with_soft(
    data: &UnlabelledSet,
    threshold: f64,
    folds: &FoldAssignment,
    r_hat: &NuisanceFit,
) -> Result<KappaEstimate> {
    let x = extract_controls(data);
    let gt = pseudo_labels(data.p(), threshold)?;
    let e_hard = cross_fit_predict(&x, &gt, folds, &LearnerConfig::hard_residualiser())?;
    let res = Residuals {
        a_soft: data
            .p()
            .iter()
            .zip(&r_hat.oof_predictions)
            .map(|(p, r)| p - r)
            .collect(),
        a_hard: gt
            .iter()
            .zip(&e_hard.oof_predictions)
            .map(|(g, e)| g - e)
            .collect(),
        threshold,
    };
    kappa_from_residuals(&res)
}

/// FixMatch-style estimator on the confident subset
/// `C = {i : max(p_i, 1 - p_i) > threshold}` with pseudo-label `1{p > 1/2}`
/// inside `C`.
pub fn confident_subset_estimator(
    data: &UnlabelledSet,
    threshold: f64,
    folds: &FoldAssignment,
) -> Result<ConfidentSubsetResult> {
    let learner = LearnerConfig::nuisance_default();
    let x = extract_controls(data);
    let m_hat = cross_fit_predict(&x, data.y(), folds, &learner)?;
    confident_subset_with_m(data, threshold, folds, &m_hat)
}

/// As [`confident_subset_estimator`] with the full-sample outcome nuisance
/// already computed.
pub fn confident_subset_with_m(
    data: &UnlabelledSet,
    threshold: f64,
    folds: &FoldAssignment,
    m_hat: &NuisanceFit,
) -> Result<ConfidentSubsetResult> {
    let p = data.p();
    let members: Vec<usize> = (0..data.len())
        .filter(|&i| p[i].max(1.0 - p[i]) > threshold)
        .collect();
    let size = members.len();
    if size < CONFIDENT_FLOOR {
        return Err(Error::ConfidentSubsetTooSmall {
            size,
            floor: CONFIDENT_FLOOR,
        });
    }
    let sub = data.select_rows(&members)?;
    let sub_folds = folds.restrict(&members);
    let gt = pseudo_labels(sub.p(), 0.5)?;
    let x_sub = extract_controls(&sub);

    // in-subset residualisation of the pseudo-label (cross-fitted OLS)
    let e_hard = cross_fit_predict(&x_sub, &gt, &sub_folds, &LearnerConfig::hard_residualiser())?;
    let a_hard: Vec<f64> = gt
        .iter()
        .zip(&e_hard.oof_predictions)
        .map(|(g, e)| g - e)
        .collect();
    let denom = mean(a_hard.iter().map(|a| a * a), size);
    if denom <= EPSILON_V_STAR {
        return Err(Error::DegenerateThreshold { threshold });
    }

    // full-sample outcome nuisance restricted to the subset
    let m_sub: Vec<f64> = members
        .iter()
        .map(|&i| m_hat.oof_predictions[i])
        .collect();
    let y_sub = sub.y();
    let numerator = mean(
        (0..size).map(|i| (2.0 * gt[i] - 1.0) * (y_sub[i] - m_sub[i])),
        size,
    );
    let tau_hat = numerator / (2.0 * denom);
    let psi2 = mean(
        (0..size).map(|i| {
            let v = (2.0 * gt[i] - 1.0) * (y_sub[i] - m_sub[i])
                - 2.0 * tau_hat * a_hard[i] * a_hard[i];
            v * v
        }),
        size,
    );
    let se = libm::sqrt(psi2) / (2.0 * denom * libm::sqrt(size as f64));

    // attenuation on the subset: in-subset residuals on both sides
    let r_sub = cross_fit_predict(&x_sub, sub.p(), &sub_folds, &LearnerConfig::nuisance_default())?;
    let res = Residuals {
        a_soft: sub
            .p()
            .iter()
            .zip(&r_sub.oof_predictions)
            .map(|(pv, rv)| pv - rv)
            .collect(),
        a_hard,
        threshold,
    };
    let kappa_fm = kappa_from_residuals(&res)?.kappa_hat;

    Ok(ConfidentSubsetResult {
        tau: TauEstimate::new(tau_hat, se, size, EstimatorMethod::Confident),
        subset_size: size,
        kappa_fm,
        threshold,
    })
}

/// Supervised labelled-only baseline: OLS of `Y` on `(1, G, X)` with
/// heteroskedasticity-robust (HC0) standard error on the `G` coefficient.
/// A constant `G` yields an infinite standard error.
pub fn supervised_baseline(data: &LabelledSet) -> Result<TauEstimate> {
    let n = data.len();
    let x = extract_controls(data);
    let d_x = x.cols();
    if n <= d_x + 2 {
        return Err(Error::TooFewRows {
            needed: d_x + 3,
            got: n,
        });
    }
    let dim = 2 + d_x;
    let mut a = alloc::vec![0.0; dim * dim];
    let mut b = alloc::vec![0.0; dim];
    let mut row = alloc::vec![0.0; dim];
    let g = data.g();
    let y = data.y();
    for i in 0..n {
        row[0] = 1.0;
        row[1] = g[i] as f64;
        row[2..].copy_from_slice(x.row(i));
        for q in 0..dim {
            b[q] += row[q] * y[i];
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
            // ridge fallback on the non-intercept block
            let mut ar = a.clone();
            for q in 1..dim {
                ar[q * dim + q] += 1e-8;
            }
            linalg::invert_spd(&ar, dim, linalg::PIVOT_TOL)?
        }
    };
    let mut beta = alloc::vec![0.0; dim];
    for q in 0..dim {
        for r in 0..dim {
            beta[q] += a_inv[q * dim + r] * b[r];
        }
    }
    // HC0 variance of the G coefficient: row 1 of A^-1 against the meat
    let arow = &a_inv[dim..2 * dim];
    let mut var = 0.0;
    for i in 0..n {
        row[0] = 1.0;
        row[1] = g[i] as f64;
        row[2..].copy_from_slice(x.row(i));
        let fit: f64 = row.iter().zip(&beta).map(|(u, v)| u * v).sum();
        let lever: f64 = row.iter().zip(arow).map(|(u, v)| u * v).sum();
        let e = y[i] - fit;
        var += e * e * lever * lever;
    }
    let g_mean = g.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let g_var = g
        .iter()
        .map(|&v| (v as f64 - g_mean) * (v as f64 - g_mean))
        .sum::<f64>()
        / n as f64;
    let se = if g_var == 0.0 {
        f64::INFINITY
    } else {
        libm::sqrt(var)
    };
    Ok(TauEstimate::new(
        beta[1],
        se,
        n,
        EstimatorMethod::Supervised,
    ))
}

/// Drift sensitivity bound `|tau_hat| * delta * mean|2p-1| / (2 V*_hat)`:
/// the worst-case asymptotic bias of the soft estimator when the conditional
/// calibration drifts by at most `delta`.
pub fn sensitivity_bound(detail: &SoftEstimatorDetail, delta: f64) -> SensitivityBound {
    debug_assert!(delta >= 0.0);
    let bound = libm::fabs(detail.tau.tau_hat) * delta * detail.mean_abs_signed_score
        / (2.0 * detail.v_star_hat);
    SensitivityBound {
        delta,
        bound,
        mean_abs_signed_score: detail.mean_abs_signed_score,
    }
}
