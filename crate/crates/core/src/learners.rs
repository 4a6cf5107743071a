//! Regression substrate for all nuisance functions: polynomial basis
//! expansion, ridge regression with GCV-selected penalty, logistic regression
//! via IRLS, and K-fold cross-fitted out-of-fold prediction.
//!
//! Basis columns are standardized internally (zero mean, unit scale, computed
//! on the training rows) so a single penalty grid works across heterogeneous
//! column scales; coefficients are mapped back to raw units. Zero-variance
//! columns are excluded from the solve and get coefficient zero. The
//! intercept is never penalized.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// resolves f64 math to libm in no_std builds
#[allow(unused_imports)]
use num_traits::Float;

use crate::data::FoldAssignment;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Penalty grid scanned by generalized cross-validation.
pub const GCV_LAMBDA_GRID: [f64; 7] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];

/// Fallback ridge penalty applied when a plain OLS solve hits a singular
/// design.
pub const OLS_FALLBACK_LAMBDA: f64 = 1e-8;

/// L2 penalty on non-intercept logistic coefficients; bounds the solution
/// under separation.
pub const LOGISTIC_RIDGE: f64 = 1e-6;

/// Interval the calibrated/logistic predictions are clipped to.
pub const PROB_CLIP: (f64, f64) = (1e-6, 1.0 - 1e-6);

/// Feature map applied to the raw control matrix before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Linear,
    Poly2,
}

impl Basis {
    pub fn expand(&self, x: &Matrix) -> Matrix {
        match self {
            Basis::Linear => x.clone(),
            Basis::Poly2 => expand_poly2(x),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Basis::Linear => "linear",
            Basis::Poly2 => "poly2",
        }
    }
}

/// Degree-2 polynomial expansion: original columns, squares, then pairwise
/// products in lexicographic index order. No intercept column; the fitters
/// handle the intercept themselves.
pub fn expand_poly2(x: &Matrix) -> Matrix {
    let (n, d) = (x.rows(), x.cols());
    let out_cols = 2 * d + d * d.saturating_sub(1) / 2;
    let mut out = Matrix::zeros(n, out_cols);
    for i in 0..n {
        let row = x.row(i);
        for j in 0..d {
            out.set(i, j, row[j]);
            out.set(i, d + j, row[j] * row[j]);
        }
        let mut c = 2 * d;
        for a in 0..d {
            for b in a + 1..d {
                out.set(i, c, row[a] * row[b]);
                c += 1;
            }
        }
    }
    out
}

/// How the ridge penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// Fixed penalty; zero means plain OLS and fails on a singular design.
    Fixed(f64),
    /// Generalized cross-validation over [`GCV_LAMBDA_GRID`].
    Gcv,
    /// Plain OLS, retried with [`OLS_FALLBACK_LAMBDA`] on singularity.
    OlsFallback,
}

/// Learner used for cross-fitted nuisance regressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub basis: Basis,
    pub penalty: Penalty,
}

impl LearnerConfig {
    /// Default nuisance learner: ridge on the poly2 basis, GCV penalty.
    pub fn nuisance_default() -> Self {
        LearnerConfig {
            basis: Basis::Poly2,
            penalty: Penalty::Gcv,
        }
    }

    /// Convention for residualising hard pseudo-labels: cross-fitted OLS on
    /// the linear basis, with a tiny ridge fallback on singularity.
    pub fn hard_residualiser() -> Self {
        LearnerConfig {
            basis: Basis::Linear,
            penalty: Penalty::OlsFallback,
        }
    }

    pub fn tag(&self) -> String {
        use alloc::format;
        match self.penalty {
            Penalty::Fixed(l) => format!("ridge({l:e}):{}", self.basis.tag()),
            Penalty::Gcv => format!("ridge(gcv):{}", self.basis.tag()),
            Penalty::OlsFallback => format!("ols:{}", self.basis.tag()),
        }
    }
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig::nuisance_default()
    }
}

// ---------------------------------------------------------------------------
// standardization
// ---------------------------------------------------------------------------

struct Standardizer {
    means: Vec<f64>,
    scales: Vec<f64>,
    /// columns with positive variance; the rest get coefficient zero
    active: Vec<usize>,
}

impl Standardizer {
    fn fit(design: &Matrix, rows: &[usize]) -> Standardizer {
        let d = design.cols();
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for &i in rows {
            let r = design.row(i);
            for j in 0..d {
                means[j] += r[j];
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut scales = vec![0.0; d];
        for &i in rows {
            let r = design.row(i);
            for j in 0..d {
                let c = r[j] - means[j];
                scales[j] += c * c;
            }
        }
        let mut active = Vec::new();
        for (j, s) in scales.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if *s > 1e-12 {
                active.push(j);
            } else {
                *s = 1.0;
            }
        }
        Standardizer {
            means,
            scales,
            active,
        }
    }
}

// ---------------------------------------------------------------------------
// ridge
// ---------------------------------------------------------------------------

/// Linear model on a basis expansion; `coefficients[0]` is the intercept,
/// the rest follow the basis column order in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub basis: Basis,
    pub ridge_lambda: f64,
}

impl LinearModel {
    /// Predict from a raw (pre-basis) feature row.
    pub fn predict_row(&self, raw: &[f64]) -> f64 {
        let x = Matrix::from_rows(&[raw]);
        let b = self.basis.expand(&x);
        self.predict_basis_row(b.row(0))
    }

    /// Predict from an already-expanded basis row.
    pub fn predict_basis_row(&self, basis_row: &[f64]) -> f64 {
        debug_assert_eq!(basis_row.len() + 1, self.coefficients.len());
        let mut s = self.coefficients[0];
        for (c, v) in self.coefficients[1..].iter().zip(basis_row) {
            s += c * v;
        }
        s
    }

    pub fn predict(&self, raw: &Matrix) -> Vec<f64> {
        let b = self.basis.expand(raw);
        (0..b.rows()).map(|i| self.predict_basis_row(b.row(i))).collect()
    }
}

/// Core penalized least-squares solve on the standardized, centered system,
/// restricted to the given training rows.
fn ridge_on_rows(design: &Matrix, y: &[f64], rows: &[usize], lambda: f64) -> Result<LinearModel> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let st = Standardizer::fit(design, rows);
    let da = st.active.len();
    let n = rows.len() as f64;
    let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;

    let mut beta_std = vec![0.0; da];
    if da > 0 {
        // normal equations on standardized active columns
        let mut a = vec![0.0; da * da];
        let mut b = vec![0.0; da];
        let mut z = vec![0.0; da];
        for &i in rows {
            let r = design.row(i);
            for (jj, &j) in st.active.iter().enumerate() {
                z[jj] = (r[j] - st.means[j]) / st.scales[j];
            }
            let yc = y[i] - y_mean;
            for p in 0..da {
                b[p] += z[p] * yc;
                for q in p..da {
                    a[p * da + q] += z[p] * z[q];
                }
            }
        }
        for p in 0..da {
            for q in 0..p {
                a[p * da + q] = a[q * da + p];
            }
            a[p * da + p] += lambda;
        }
        beta_std = linalg::solve_spd(&a, da, &b, linalg::PIVOT_TOL)?;
    }

    // back to raw units
    let d = design.cols();
    let mut coefficients = vec![0.0; d + 1];
    for (jj, &j) in st.active.iter().enumerate() {
        coefficients[j + 1] = beta_std[jj] / st.scales[j];
    }
    let mut intercept = y_mean;
    for j in 0..d {
        intercept -= coefficients[j + 1] * st.means[j];
    }
    coefficients[0] = intercept;
    Ok(LinearModel {
        coefficients,
        basis: Basis::Linear,
        ridge_lambda: lambda,
    })
}

/// Ridge fit on an already-expanded basis matrix. The intercept is handled
/// internally and never penalized; `lambda = 0` is plain OLS and fails with
/// [`Error::SingularDesign`] on a rank-deficient design.
pub fn fit_ridge(x_basis: &Matrix, y: &[f64], lambda: f64) -> Result<LinearModel> {
    if x_basis.rows() != y.len() {
        return Err(Error::InvalidData(
            "design and target lengths differ".into(),
        ));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidValue("lambda must be nonnegative".into()));
    }
    let rows: Vec<usize> = (0..x_basis.rows()).collect();
    ridge_on_rows(x_basis, y, &rows, lambda)
}

/// GCV score and fit for every grid point; returns the minimizing fit.
///
/// `GCV(lambda) = n RSS / (n - edf)^2` with `edf = 1 + tr((Z'Z + lambda I)^-1 Z'Z)`.
fn ridge_gcv_on_rows(design: &Matrix, y: &[f64], rows: &[usize]) -> Result<LinearModel> {
    let st = Standardizer::fit(design, rows);
    let da = st.active.len();
    let n = rows.len() as f64;
    if da == 0 {
        return ridge_on_rows(design, y, rows, GCV_LAMBDA_GRID[0]);
    }
    let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;

    let mut a = vec![0.0; da * da];
    let mut b = vec![0.0; da];
    let mut z = vec![0.0; da];
    let mut zrows: Vec<f64> = Vec::with_capacity(rows.len() * da);
    let mut yc_all: Vec<f64> = Vec::with_capacity(rows.len());
    for &i in rows {
        let r = design.row(i);
        for (jj, &j) in st.active.iter().enumerate() {
            z[jj] = (r[j] - st.means[j]) / st.scales[j];
        }
        let yc = y[i] - y_mean;
        yc_all.push(yc);
        zrows.extend_from_slice(&z);
        for p in 0..da {
            b[p] += z[p] * yc;
            for q in p..da {
                a[p * da + q] += z[p] * z[q];
            }
        }
    }
    for p in 0..da {
        for q in 0..p {
            a[p * da + q] = a[q * da + p];
        }
    }

    let mut best: Option<(f64, f64)> = None; // (gcv, lambda)
    for &lambda in GCV_LAMBDA_GRID.iter() {
        let mut ap = a.clone();
        for p in 0..da {
            ap[p * da + p] += lambda;
        }
        let inv = match linalg::invert_spd(&ap, da, linalg::PIVOT_TOL) {
            Ok(v) => v,
            Err(_) => continue,
        };
        // beta = inv * b
        let mut beta = vec![0.0; da];
        for p in 0..da {
            for q in 0..da {
                beta[p] += inv[p * da + q] * b[q];
            }
        }
        // edf = 1 + tr(inv * A)
        let mut edf = 1.0;
        for p in 0..da {
            for q in 0..da {
                edf += inv[p * da + q] * a[q * da + p];
            }
        }
        let mut rss = 0.0;
        for (i, yc) in yc_all.iter().enumerate() {
            let zr = &zrows[i * da..(i + 1) * da];
            let fit: f64 = zr.iter().zip(&beta).map(|(u, v)| u * v).sum();
            let e = yc - fit;
            rss += e * e;
        }
        let denom = n - edf;
        if denom <= 0.0 {
            continue;
        }
        let gcv = n * rss / (denom * denom);
        if best.map_or(true, |(g, _)| gcv < g) {
            best = Some((gcv, lambda));
        }
    }
    let (_, lambda) = best.ok_or(Error::SingularDesign)?;
    ridge_on_rows(design, y, rows, lambda)
}

fn fit_linear_on_rows(
    design: &Matrix,
    y: &[f64],
    rows: &[usize],
    cfg: &LearnerConfig,
) -> Result<LinearModel> {
    let mut model = match cfg.penalty {
        Penalty::Fixed(lambda) => ridge_on_rows(design, y, rows, lambda)?,
        Penalty::Gcv => ridge_gcv_on_rows(design, y, rows)?,
        Penalty::OlsFallback => match ridge_on_rows(design, y, rows, 0.0) {
            Ok(m) => m,
            Err(Error::SingularDesign) => ridge_on_rows(design, y, rows, OLS_FALLBACK_LAMBDA)?,
            Err(e) => return Err(e),
        },
    };
    model.basis = cfg.basis;
    Ok(model)
}

/// Fit the configured learner on raw (pre-basis) features.
pub fn fit_linear(x_raw: &Matrix, y: &[f64], cfg: &LearnerConfig) -> Result<LinearModel> {
    let design = cfg.basis.expand(x_raw);
    let rows: Vec<usize> = (0..design.rows()).collect();
    fit_linear_on_rows(&design, y, &rows, cfg)
}

// ---------------------------------------------------------------------------
// logistic regression (IRLS)
// ---------------------------------------------------------------------------

/// Logistic model; `coefficients[0]` is the intercept. Predictions are
/// clipped to [`PROB_CLIP`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub basis: Basis,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn predict_row(&self, raw: &[f64]) -> f64 {
        let x = Matrix::from_rows(&[raw]);
        let b = self.basis.expand(&x);
        self.predict_basis_row(b.row(0))
    }

    pub fn predict_basis_row(&self, basis_row: &[f64]) -> f64 {
        let mut s = self.coefficients[0];
        for (c, v) in self.coefficients[1..].iter().zip(basis_row) {
            s += c * v;
        }
        sigmoid(s).clamp(PROB_CLIP.0, PROB_CLIP.1)
    }

    pub fn predict(&self, raw: &Matrix) -> Vec<f64> {
        let b = self.basis.expand(raw);
        (0..b.rows()).map(|i| self.predict_basis_row(b.row(i))).collect()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Penalized log-likelihood; `beta` lives in the standardized space where
/// the L2 penalty applies to all non-intercept coefficients.
fn penalized_ll(z: &[f64], g: &[f64], beta: &[f64], da: usize) -> f64 {
    let n = g.len();
    let mut ll = 0.0;
    for i in 0..n {
        let zr = &z[i * (da + 1)..(i + 1) * (da + 1)];
        let eta: f64 = zr.iter().zip(beta).map(|(u, v)| u * v).sum();
        // log-likelihood term via the numerically stable log1p form
        ll += if eta >= 0.0 {
            g[i] * eta - eta - (-eta).exp().ln_1p()
        } else {
            g[i] * eta - eta.exp().ln_1p()
        };
    }
    let pen: f64 = beta[1..].iter().map(|b| b * b).sum();
    ll - 0.5 * LOGISTIC_RIDGE * pen
}

pub(crate) struct IrlsOutcome {
    pub model: LogisticModel,
    /// penalized log-likelihood after each accepted step; read by tests
    #[cfg_attr(not(test), allow(dead_code))]
    pub ll_trace: Vec<f64>,
}

pub(crate) fn irls_on_rows(
    design: &Matrix,
    g: &[f64],
    rows: &[usize],
    max_iter: usize,
    tol: f64,
) -> Result<IrlsOutcome> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let st = Standardizer::fit(design, rows);
    let da = st.active.len();
    let n = rows.len();
    // standardized design with leading intercept column, flattened row-major
    let mut z = Vec::with_capacity(n * (da + 1));
    let mut gl = Vec::with_capacity(n);
    for &i in rows {
        let r = design.row(i);
        z.push(1.0);
        for &j in &st.active {
            z.push((r[j] - st.means[j]) / st.scales[j]);
        }
        gl.push(g[i]);
    }

    let dim = da + 1;
    let mut beta = vec![0.0; dim];
    let mut ll = penalized_ll(&z, &gl, &beta, da);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        // gradient and Hessian of the penalized log-likelihood
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        for i in 0..n {
            let zr = &z[i * dim..(i + 1) * dim];
            let eta: f64 = zr.iter().zip(&beta).map(|(u, v)| u * v).sum();
            let mu = sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let e = gl[i] - mu;
            for p in 0..dim {
                grad[p] += zr[p] * e;
                for q in p..dim {
                    hess[p * dim + q] += w * zr[p] * zr[q];
                }
            }
        }
        for p in 1..dim {
            grad[p] -= LOGISTIC_RIDGE * beta[p];
        }
        for p in 0..dim {
            for q in 0..p {
                hess[p * dim + q] = hess[q * dim + p];
            }
            if p > 0 {
                hess[p * dim + p] += LOGISTIC_RIDGE;
            }
        }
        let step = linalg::solve_spd(&hess, dim, &grad, linalg::PIVOT_TOL)
            .or_else(|_| {
                let mut h = hess.clone();
                for p in 0..dim {
                    h[p * dim + p] += 1e-8;
                }
                linalg::solve_spd(&h, dim, &grad, linalg::PIVOT_TOL)
            })?;

        // step halving keeps the penalized log-likelihood non-decreasing
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(&step)
                .map(|(b, s)| b + scale * s)
                .collect();
            let cand_ll = penalized_ll(&z, &gl, &cand, da);
            if cand_ll >= ll {
                let max_change = step
                    .iter()
                    .map(|s| (scale * s).abs())
                    .fold(0.0_f64, f64::max);
                beta = cand;
                ll = cand_ll;
                trace.push(ll);
                accepted = true;
                if max_change < tol {
                    converged = true;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // no admissible ascent step: we are at a stationary point
            converged = true;
        }
        if converged {
            break;
        }
    }

    // back to raw units
    let d = design.cols();
    let mut coefficients = vec![0.0; d + 1];
    for (jj, &j) in st.active.iter().enumerate() {
        coefficients[j + 1] = beta[jj + 1] / st.scales[j];
    }
    let mut intercept = beta[0];
    for j in 0..d {
        intercept -= coefficients[j + 1] * st.means[j];
    }
    coefficients[0] = intercept;
    Ok(IrlsOutcome {
        model: LogisticModel {
            coefficients,
            basis: Basis::Linear,
            converged,
            iterations,
        },
        ll_trace: trace,
    })
}

/// Logistic regression of a binary target on an already-expanded basis, via
/// iteratively reweighted least squares with step halving. Never fails on
/// separation; non-convergence is reported through the `converged` flag.
pub fn fit_logistic(
    x_basis: &Matrix,
    g: &[u8],
    max_iter: usize,
    tol: f64,
) -> Result<LogisticModel> {
    if x_basis.rows() != g.len() {
        return Err(Error::InvalidData(
            "design and target lengths differ".into(),
        ));
    }
    if max_iter == 0 {
        return Err(Error::InvalidValue("max_iter must be >= 1".into()));
    }
    let gf: Vec<f64> = g.iter().map(|&v| v as f64).collect();
    let rows: Vec<usize> = (0..x_basis.rows()).collect();
    Ok(irls_on_rows(x_basis, &gf, &rows, max_iter, tol)?.model)
}

/// Logistic fit on raw features with a basis from the config.
pub fn fit_logistic_basis(
    x_raw: &Matrix,
    g: &[u8],
    basis: Basis,
    max_iter: usize,
    tol: f64,
) -> Result<LogisticModel> {
    let design = basis.expand(x_raw);
    let mut model = fit_logistic(&design, g, max_iter, tol)?;
    model.basis = basis;
    Ok(model)
}

// ---------------------------------------------------------------------------
// cross-fitting
// ---------------------------------------------------------------------------

/// Out-of-fold nuisance predictions: row `i` is predicted by a model trained
/// on all folds except `folds.fold_of(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub oof_predictions: Vec<f64>,
    pub folds: FoldAssignment,
    pub learner_tag: String,
}

impl NuisanceFit {
    /// Wrap externally supplied values (e.g. oracle conditional means) in the
    /// nuisance interface.
    pub fn from_values(oof_predictions: Vec<f64>, folds: FoldAssignment, tag: &str) -> Self {
        NuisanceFit {
            oof_predictions,
            folds,
            learner_tag: String::from(tag),
        }
    }
}

/// K-fold cross-fitted out-of-fold prediction of `target` from `features`
/// (raw, pre-basis). For each fold, a model is trained on all other folds and
/// predicts the held-out rows; predictions are returned in original row
/// order.
pub fn cross_fit_predict(
    features: &Matrix,
    target: &[f64],
    folds: &FoldAssignment,
    cfg: &LearnerConfig,
) -> Result<NuisanceFit> {
    if features.rows() != target.len() || folds.n() != target.len() {
        return Err(Error::InvalidData(
            "features, target and folds must agree on n".into(),
        ));
    }
    let design = cfg.basis.expand(features);
    let mut oof = vec![0.0; target.len()];
    for fold in 0..folds.k() as u32 {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for i in 0..folds.n() {
            if folds.fold_of(i) == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        if test.is_empty() {
            continue;
        }
        if train.is_empty() {
            return Err(Error::in_fold(fold as usize, Error::EmptyInput));
        }
        let model = fit_linear_on_rows(&design, target, &train, cfg)
            .map_err(|e| Error::in_fold(fold as usize, e))?;
        for &i in &test {
            oof[i] = model.predict_basis_row(design.row(i));
        }
    }
    Ok(NuisanceFit {
        oof_predictions: oof,
        folds: folds.clone(),
        learner_tag: cfg.tag(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_folds;

    #[test]
    fn poly2_hand_examples() {
        let x = Matrix::from_rows(&[&[2.0]]);
        assert_eq!(expand_poly2(&x).row(0), &[2.0, 4.0]);

        let x = Matrix::from_rows(&[&[1.0, 3.0]]);
        assert_eq!(expand_poly2(&x).row(0), &[1.0, 3.0, 1.0, 9.0, 3.0]);

        let x = Matrix::zeros(3, 0);
        let e = expand_poly2(&x);
        assert_eq!((e.rows(), e.cols()), (3, 0));
    }

    #[test]
    fn ridge_constant_fit() {
        // zero-variance column is dropped, intercept carries the mean
        let x = Matrix::from_rows(&[&[0.0], &[0.0], &[0.0]]);
        let m = fit_ridge(&x, &[3.0, 3.0, 3.0], 0.0).unwrap();
        assert!((m.coefficients[0] - 3.0).abs() < 1e-12);
        assert_eq!(m.coefficients[1], 0.0);
    }

    #[test]
    fn ridge_exact_interpolation() {
        let x = Matrix::from_rows(&[&[0.0], &[1.0]]);
        let m = fit_ridge(&x, &[0.0, 1.0], 0.0).unwrap();
        assert!(m.coefficients[0].abs() < 1e-12);
        assert!((m.coefficients[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_full_shrinkage_limit() {
        let x = Matrix::from_rows(&[&[0.0], &[1.0]]);
        let m = fit_ridge(&x, &[0.0, 1.0], 1e12).unwrap();
        assert!(m.coefficients[1].abs() < 1e-9);
        assert!((m.coefficients[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn ridge_duplicate_column_splits_weight() {
        let y = [1.0, 2.0, 2.5, 4.2];
        let x2 = Matrix::from_rows(&[
            &[1.0, 1.0],
            &[2.0, 2.0],
            &[3.0, 3.0],
            &[4.0, 4.0],
        ]);
        let m2 = fit_ridge(&x2, &y, 0.5).unwrap();
        // equal split across the duplicated columns
        assert!((m2.coefficients[1] - m2.coefficients[2]).abs() < 1e-10);
        // predictions coincide with the single-column fit at half the
        // penalty (the split halves the effective penalty on the direction)
        let x1 = Matrix::from_rows(&[&[1.0], &[2.0], &[3.0], &[4.0]]);
        let m1h = fit_ridge(&x1, &y, 0.25).unwrap();
        for v in [1.5, 3.7] {
            let p2 = m2.predict_row(&[v, v]);
            let p1h = m1h.predict_row(&[v]);
            assert!((p2 - p1h).abs() < 1e-8, "{p2} vs {p1h}");
        }
    }

    #[test]
    fn ridge_singular_at_zero_lambda() {
        let x = Matrix::from_rows(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]);
        assert_eq!(
            fit_ridge(&x, &[1.0, 2.0, 3.0], 0.0).unwrap_err(),
            Error::SingularDesign
        );
        assert!(fit_ridge(&x, &[1.0, 2.0, 3.0], 1e-6).is_ok());
    }

    #[test]
    fn ridge_zero_lambda_is_ols() {
        // residuals orthogonal to each design column
        let x = Matrix::from_rows(&[
            &[1.0, 0.3],
            &[2.0, -0.5],
            &[3.0, 0.9],
            &[4.0, 0.1],
            &[5.0, -1.2],
        ]);
        let y = [1.1, 1.9, 3.2, 3.8, 5.3];
        let m = fit_ridge(&x, &y, 0.0).unwrap();
        let fitted: Vec<f64> = (0..5).map(|i| m.predict_basis_row(x.row(i))).collect();
        for j in 0..2 {
            let dot: f64 = (0..5).map(|i| (y[i] - fitted[i]) * x.get(i, j)).sum();
            assert!(dot.abs() < 1e-8 * 5.0, "column {j}: {dot}");
        }
        let sum: f64 = (0..5).map(|i| y[i] - fitted[i]).sum();
        assert!(sum.abs() < 1e-8);
    }

    #[test]
    fn logistic_intercept_only() {
        let x = Matrix::zeros(4, 0);
        let m = fit_logistic(&x, &[0, 1, 0, 1], 100, 1e-10).unwrap();
        assert!(m.converged);
        assert!(m.coefficients[0].abs() < 1e-8);

        let x = Matrix::zeros(4, 0);
        let m = fit_logistic(&x, &[1, 1, 1, 0], 100, 1e-10).unwrap();
        assert!((m.coefficients[0] - 3.0_f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn logistic_separation_matches_grid_oracle() {
        // perfectly separated two-point data; the penalized maximizer is
        // found independently by golden-section-free dense grid search
        let x = Matrix::from_rows(&[&[-1.0], &[1.0]]);
        let m = fit_logistic(&x, &[0, 1], 200, 1e-10).unwrap();
        assert!(m.converged);
        assert!(m.coefficients.iter().all(|c| c.is_finite()));

        let ll = |b1: f64| 2.0 * sigmoid(b1).ln() - 0.5 * LOGISTIC_RIDGE * b1 * b1;
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut b = 0.0;
        while b <= 30.0 {
            let v = ll(b);
            if v > best.0 {
                best = (v, b);
            }
            b += 0.001;
        }
        assert!(
            (m.coefficients[1] - best.1).abs() < 0.05,
            "irls {} vs oracle {}",
            m.coefficients[1],
            best.1
        );
        assert!(m.coefficients[0].abs() < 1e-4);
    }

    #[test]
    fn irls_objective_is_monotone() {
        // fixed pseudo-random-ish data, objective non-decreasing per step
        let mut rows = Vec::new();
        let mut g = Vec::new();
        let mut s = 0.123_f64;
        for i in 0..60 {
            s = (s * 997.0 + 0.71).fract();
            let x1 = 2.0 * s - 1.0;
            let x2 = ((i as f64) / 60.0) - 0.5;
            rows.push([x1, x2]);
            g.push(if s > 0.5 { 1.0 } else { 0.0 });
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let design = Matrix::from_rows(&refs);
        let all: Vec<usize> = (0..60).collect();
        let out = irls_on_rows(&design, &g, &all, 50, 1e-10).unwrap();
        for w in out.ll_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "objective decreased: {w:?}");
        }
    }

    #[test]
    fn cross_fit_constant_target() {
        let x = Matrix::from_rows(&[&[1.0], &[2.0], &[3.0], &[4.0], &[5.0], &[6.0]]);
        let folds = make_folds(6, 3, 1).unwrap();
        let fit = cross_fit_predict(
            &x,
            &[7.0; 6],
            &folds,
            &LearnerConfig::nuisance_default(),
        )
        .unwrap();
        for &p in &fit.oof_predictions {
            assert!((p - 7.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cross_fit_loo_recovers_exact_model() {
        // leave-one-out OLS on a linear target reproduces it exactly
        let n = 12;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let v = i as f64 * 0.37 - 2.0;
            let u = (i as f64 * 1.3).sin();
            rows.push([v, u]);
            y.push(2.0 + 0.5 * v - 1.5 * u);
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = Matrix::from_rows(&refs);
        let folds = make_folds(n, n, 3).unwrap();
        let cfg = LearnerConfig {
            basis: Basis::Linear,
            penalty: Penalty::Fixed(0.0),
        };
        let fit = cross_fit_predict(&x, &y, &folds, &cfg).unwrap();
        for (p, t) in fit.oof_predictions.iter().zip(&y) {
            assert!((p - t).abs() < 1e-8);
        }
    }

    #[test]
    fn cross_fit_never_leaks_own_row() {
        let n = 30;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let v = (i as f64 * 0.7).sin();
            rows.push([v, v * v]);
            y.push(1.0 + v + 0.1 * (i as f64));
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = Matrix::from_rows(&refs);
        let folds = make_folds(n, 5, 9).unwrap();
        let cfg = LearnerConfig {
            basis: Basis::Linear,
            penalty: Penalty::Fixed(0.5),
        };
        let base = cross_fit_predict(&x, &y, &folds, &cfg).unwrap();
        for i in [0usize, 7, 29] {
            let mut y2 = y.clone();
            y2[i] += 100.0;
            let pert = cross_fit_predict(&x, &y2, &folds, &cfg).unwrap();
            assert_eq!(
                base.oof_predictions[i], pert.oof_predictions[i],
                "row {i} leaked its own target"
            );
        }
    }
}
